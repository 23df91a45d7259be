#include "repprobe/knn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "repprobe/error.hpp"
#include "repprobe/rng.hpp"
#include "repprobe/stats.hpp"

namespace repprobe {

namespace {

std::vector<EntityKind> block_layout(const LabeledExample& example) {
  if (const auto* p = std::get_if<EntityPair>(&example.source)) {
    const auto [a, b] = kinds_of(p->type);
    return {a, b};
  }
  return {EntityKind::Variant, EntityKind::Gene, EntityKind::Disease, EntityKind::Drug};
}

std::vector<int> labels_of(const std::vector<LabeledExample>& examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

}  // namespace

OneHotVocab OneHotVocab::build(const std::vector<LabeledExample>& train) {
  std::map<EntityKind, std::set<std::string>> seen;
  for (const auto& ex : train)
    for (const auto& e : ex.entities()) seen[e.kind()].insert(e.name());
  OneHotVocab v;
  for (auto& [k, names] : seen) v.names_[k] = std::vector<std::string>(names.begin(), names.end());
  return v;
}

std::size_t OneHotVocab::dimension(EntityKind kind) const { return names(kind).size(); }

const std::vector<std::string>& OneHotVocab::names(EntityKind kind) const {
  static const std::vector<std::string> none;
  auto it = names_.find(kind);
  return it == names_.end() ? none : it->second;
}

std::optional<std::size_t> OneHotVocab::position(const Entity& e) const {
  const auto& n = names(e.kind());
  auto it = std::lower_bound(n.begin(), n.end(), e.name());
  if (it == n.end() || *it != e.name()) return std::nullopt;
  return static_cast<std::size_t>(it - n.begin());
}

Eigen::VectorXd encode_one_hot(const LabeledExample& example, const OneHotVocab& vocab) {
  const auto layout = block_layout(example);
  std::map<EntityKind, Eigen::Index> offset;
  Eigen::Index dim = 0;
  for (auto k : layout) {
    offset[k] = dim;
    dim += static_cast<Eigen::Index>(vocab.dimension(k));
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  for (const auto& e : example.entities())
    if (auto pos = vocab.position(e)) v(offset.at(e.kind()) + static_cast<Eigen::Index>(*pos)) = 1.0;
  return v;
}

Eigen::MatrixXd encode_one_hot(const std::vector<LabeledExample>& examples, const OneHotVocab& vocab) {
  if (examples.empty()) return {};
  const Eigen::VectorXd first = encode_one_hot(examples.front(), vocab);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(examples.size()), first.size());
  m.row(0) = first.transpose();
  for (std::size_t i = 1; i < examples.size(); ++i) {
    const Eigen::VectorXd row = encode_one_hot(examples[i], vocab);
    if (row.size() != first.size()) throw DimensionMismatch("examples of different tasks in one encoding");
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

double knn_predict(const Eigen::MatrixXd& train, const std::vector<int>& labels, const Eigen::VectorXd& query, int k,
                   int positive_label) {
  if (train.rows() == 0) throw EmptyTrainSet();
  if (static_cast<std::size_t>(train.rows()) != labels.size())
    throw LengthMismatch(static_cast<std::size_t>(train.rows()), labels.size());
  if (train.cols() != query.size())
    throw DimensionMismatch("query has " + std::to_string(query.size()) + " features, train " +
                            std::to_string(train.cols()));
  if (k < 1 || k > train.rows()) throw InvalidArgument("k must lie in [1, |train|]");

  const Eigen::VectorXd dist2 = (train.rowwise() - query.transpose()).rowwise().squaredNorm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return dist2(a) != dist2(b) ? dist2(a) < dist2(b) : a < b;
  });
  int hits = 0;
  for (int i = 0; i < k; ++i)
    if (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] == positive_label) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::vector<double> knn_scores(const std::vector<LabeledExample>& train, const std::vector<LabeledExample>& test,
                               int k) {
  if (train.empty()) throw EmptyTrainSet();
  const OneHotVocab vocab = OneHotVocab::build(train);
  const Eigen::MatrixXd x = encode_one_hot(train, vocab);
  const auto labels = labels_of(train);
  std::vector<double> scores;
  scores.reserve(test.size());
  for (const auto& ex : test) scores.push_back(knn_predict(x, labels, encode_one_hot(ex, vocab), k));
  return scores;
}

CrossValidation cross_validate(const std::vector<LabeledExample>& examples, int k_folds, std::uint64_t seed,
                               int knn_k) {
  if (k_folds < 2) throw InvalidArgument("cross-validation needs at least 2 folds");
  if (examples.size() < static_cast<std::size_t>(k_folds))
    throw InsufficientData("fewer examples than folds");

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  CrossValidation cv;
  std::vector<double> oof_scores(examples.size());
  std::vector<int> oof_labels(examples.size());
  std::vector<double> defined;
  for (int f = 0; f < k_folds; ++f) {
    std::vector<LabeledExample> train, test;
    std::vector<std::size_t> test_idx;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (static_cast<int>(i % static_cast<std::size_t>(k_folds)) == f) {
        test.push_back(examples[order[i]]);
        test_idx.push_back(order[i]);
      } else {
        train.push_back(examples[order[i]]);
      }
    }
    const int k = std::min<int>(knn_k, static_cast<int>(train.size()));
    const auto scores = knn_scores(train, test, k);
    std::vector<int> labels = labels_of(test);
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
      oof_scores[test_idx[i]] = scores[i];
      oof_labels[test_idx[i]] = labels[i];
    }
    cv.fold_sizes.push_back(test.size());
    try {
      const double a = auc(scores, labels);
      cv.fold_auc.emplace_back(a);
      defined.push_back(a);
    } catch (const SingleClass&) {
      cv.fold_auc.emplace_back(std::nullopt);
    }
  }

  if (!defined.empty()) {
    const double mean = std::accumulate(defined.begin(), defined.end(), 0.0) / static_cast<double>(defined.size());
    cv.mean_auc = mean;
    if (defined.size() > 1) {
      double ss = 0;
      for (double a : defined) ss += (a - mean) * (a - mean);
      cv.sd_auc = std::sqrt(ss / static_cast<double>(defined.size() - 1));
    }
  }
  try {
    cv.pooled_auc = auc(oof_scores, oof_labels);
  } catch (const SingleClass&) {
  }
  return cv;
}

}  // namespace repprobe
