#pragma once
// Linear probes with nuclear-norm complexity control, control tasks with
// randomized labels, and probe sweeps reporting selectivity.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "repprobe/embedding_store.hpp"
#include "repprobe/error.hpp"

namespace repprobe {

/// Sum of singular values.
template <typename Derived>
typename Derived::RealScalar nuclear_norm(const Eigen::MatrixBase<Derived>& w) {
  using Plain = typename Derived::PlainObject;
  if (!w.allFinite()) throw NonFinite("nuclear_norm argument");
  if (w.size() == 0) return 0;
  Eigen::BDCSVD<Plain> svd(w.derived());
  return svd.singularValues().sum();
}

/// U·Vᵀ over the non-zero singular triplets of W: a subgradient of the nuclear
/// norm (the gradient wherever W has full rank and distinct singular values).
/// Returns zero for W = 0.
template <typename Derived>
typename Derived::PlainObject nuclear_norm_subgradient(const Eigen::MatrixBase<Derived>& w) {
  using Plain = typename Derived::PlainObject;
  using Real = typename Derived::RealScalar;
  if (!w.allFinite()) throw NonFinite("nuclear_norm_subgradient argument");
  Plain g = Plain::Zero(w.rows(), w.cols());
  if (w.size() == 0) return g;
  Eigen::BDCSVD<Plain> svd(w.derived(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == Real(0)) return g;
  const Real tol = s(0) * Real(std::max(w.rows(), w.cols())) * Eigen::NumTraits<Real>::epsilon();
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > tol) ++rank;
  g.noalias() = svd.matrixU().leftCols(rank) * svd.matrixV().leftCols(rank).transpose();
  return g;
}

/// Proximal step of tau·‖·‖*: singular values shrunk by tau and clamped at 0.
template <typename Derived>
typename Derived::PlainObject singular_value_shrink(const Eigen::MatrixBase<Derived>& w,
                                                    typename Derived::RealScalar tau) {
  using Plain = typename Derived::PlainObject;
  if (w.size() == 0 || tau <= 0) return w;
  Eigen::BDCSVD<Plain> svd(w.derived(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  auto s = (svd.singularValues().array() - tau).max(0).matrix().eval();
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

/// ŷ = W x + b with one row of W per target label.
struct ProbeModel {
  Eigen::MatrixXd weights;  // |targets| x d
  Eigen::VectorXd bias;     // |targets|

  Eigen::Index targets() const { return weights.rows(); }
  Eigen::Index dimension() const { return weights.cols(); }
};

/// Features one row per example, labels index into the target set.
struct ProbeData {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return labels.size(); }
  ProbeData subset(const std::vector<std::size_t>& rows) const;
};

struct ProbeConfig {
  double lambda = 0.0;
  double dropout = 0.0;
  int epochs = 5;
  std::uint64_t seed = 0;
  bool is_control = false;
  std::vector<std::string> target_set;
  double learning_rate = 0.01;
  int batch_size = 32;

  friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

struct ProbeRun {
  ProbeConfig config;
  ProbeModel model;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double nuclear_norm = 0.0;
  int best_epoch = 0;
};

struct ProbeLoss {
  double value = 0.0;
  Eigen::MatrixXd grad_weights;
  Eigen::VectorXd grad_bias;
};

/// −Σ log softmax(W x_i + b)[t_i] + λ‖W‖*, with its (sub)gradient.
ProbeLoss probe_loss(const ProbeModel& model, const ProbeData& data, double lambda);

/// Row-wise softmax of W x + b.
Eigen::MatrixXd predict_proba(const ProbeModel& model, const Eigen::MatrixXd& features);
double accuracy(const ProbeModel& model, const ProbeData& data);

struct ProbeSplit {
  std::vector<std::size_t> train, val, test;
};

/// 20/40/40 shuffle split: floor(0.2 n) train, floor(0.4 n) validation, rest
/// test. Every label needs at least 5 examples.
ProbeSplit split_for_probing(const std::vector<int>& labels, std::uint64_t seed);

/// Mini-batch gradient descent on (1/n)·(cross-entropy sum + λ‖W‖*) with
/// inverted input dropout. The nuclear-norm term is applied as a proximal
/// step after each data step. Keeps the parameters of the best validation
/// epoch (earliest on ties).
ProbeRun train_probe(const ProbeData& train, const ProbeData& val, const ProbeConfig& config);

/// Independent uniform label per id, stable across calls and splits.
std::vector<int> control_labels(const std::vector<std::string>& ids, std::size_t n_targets, std::uint64_t seed);

/// Rewrites `tag_key` of every record with a random label drawn from the
/// sorted distinct values of that tag.
std::vector<EmbeddingRecord> make_control_labels(std::vector<EmbeddingRecord> records, const std::string& tag_key,
                                                 std::uint64_t seed);

/// Features and label indices from records; the target set is the sorted list
/// of distinct `tag_key` values.
std::pair<ProbeData, std::vector<std::string>> make_probe_data(const std::vector<EmbeddingRecord>& records,
                                                               const std::string& tag_key);

struct SweepOptions {
  int n_probes = 50;
  std::uint64_t seed = 0;
  std::string tag_key = "entity_kind";
  std::pair<double, double> lambda_range{1e-4, 1e1};  // sampled log-uniform
  std::pair<double, double> dropout_range{0.0, 0.5};  // sampled uniform
  int epochs = 5;
  double learning_rate = 0.01;
  int batch_size = 32;
  unsigned threads = 0;  // 0 = hardware concurrency
};

struct ProbeReportRow {
  int probe_id = 0;
  bool is_control = false;
  double lambda = 0.0;
  double dropout = 0.0;
  double nuclear_norm = 0.0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double selectivity = 0.0;  // probe test accuracy minus matched control
};

struct ProbeReport {
  std::vector<std::string> target_set;
  std::vector<ProbeRun> probes;    // indexed by probe_id
  std::vector<ProbeRun> controls;  // matched control for each probe
  std::vector<ProbeReportRow> rows;  // sorted by nuclear norm

  double mean_selectivity() const;
};

ProbeReport run_probe_sweep(const std::vector<EmbeddingRecord>& records, const SweepOptions& options);
ProbeReport run_probe_sweep(const ProbeData& data, const std::vector<std::string>& target_set,
                            const SweepOptions& options);

/// probe_id, is_control, lambda, dropout, nuclear_norm, val_acc, test_acc, selectivity
void write_probe_report_tsv(const ProbeReport& report, std::ostream& sink);

}  // namespace repprobe
