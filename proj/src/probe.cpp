#include "repprobe/probe.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "repprobe/rng.hpp"

namespace repprobe {

namespace {

Eigen::MatrixXd softmax_rows(Eigen::MatrixXd logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return logits;
}

void check_data(const ProbeData& d, const char* what) {
  if (static_cast<std::size_t>(d.features.rows()) != d.labels.size())
    throw LengthMismatch(static_cast<std::size_t>(d.features.rows()), d.labels.size());
  if (d.labels.empty()) throw InsufficientData(std::string(what) + " set is empty");
}

}  // namespace

ProbeData ProbeData::subset(const std::vector<std::size_t>& rows) const {
  ProbeData out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
    if (!ids.empty()) out.ids.push_back(ids[rows[i]]);
  }
  return out;
}

Eigen::MatrixXd predict_proba(const ProbeModel& model, const Eigen::MatrixXd& features) {
  Eigen::MatrixXd logits = features * model.weights.transpose();
  logits.rowwise() += model.bias.transpose();
  return softmax_rows(std::move(logits));
}

double accuracy(const ProbeModel& model, const ProbeData& data) {
  if (data.labels.empty()) return 0.0;
  const Eigen::MatrixXd p = predict_proba(model, data.features);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    p.row(i).maxCoeff(&best);
    if (best == data.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.labels.size());
}

ProbeLoss probe_loss(const ProbeModel& model, const ProbeData& data, double lambda) {
  check_data(data, "loss");
  Eigen::MatrixXd logits = data.features * model.weights.transpose();
  logits.rowwise() += model.bias.transpose();

  ProbeLoss loss;
  Eigen::MatrixXd residual(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    const auto t = static_cast<Eigen::Index>(data.labels[static_cast<std::size_t>(i)]);
    loss.value += lse - logits(i, t);
    residual.row(i) = (logits.row(i).array() - lse).exp().matrix();
    residual(i, t) -= 1.0;
  }
  loss.grad_weights = residual.transpose() * data.features;
  loss.grad_bias = residual.colwise().sum().transpose();
  if (lambda != 0.0) {
    loss.value += lambda * nuclear_norm(model.weights);
    loss.grad_weights += lambda * nuclear_norm_subgradient(model.weights);
  }
  return loss;
}

ProbeSplit split_for_probing(const std::vector<int>& labels, std::uint64_t seed) {
  std::map<int, std::size_t> per_label;
  for (int l : labels) ++per_label[l];
  if (per_label.empty()) throw InsufficientData("no records to probe");
  for (const auto& [l, c] : per_label)
    if (c < 5) throw InsufficientData("label " + std::to_string(l) + " has " + std::to_string(c) + " records, need 5");

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = labels.size();
  const std::size_t n_train = n * 2 / 10;
  const std::size_t n_val = n * 4 / 10;
  ProbeSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

ProbeRun train_probe(const ProbeData& train, const ProbeData& val, const ProbeConfig& config) {
  check_data(train, "training");
  if (config.epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (config.batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (config.lambda < 0) throw InvalidArgument("lambda must be >= 0");
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) throw InvalidArgument("dropout must lie in [0, 1)");
  const auto n_targets = static_cast<Eigen::Index>(config.target_set.size());
  if (n_targets < 2) throw InvalidArgument("a probe needs at least 2 targets");
  for (const auto* d : {&train, &val})
    for (int l : d->labels)
      if (l < 0 || l >= n_targets) throw InvalidArgument("label outside the target set");

  const Eigen::Index n = train.features.rows();
  const Eigen::Index d = train.features.cols();
  ProbeModel model{Eigen::MatrixXd::Zero(n_targets, d), Eigen::VectorXd::Zero(n_targets)};
  // Proximal threshold per step for the objective scaled by 1/n.
  const double shrink = config.learning_rate * config.lambda / static_cast<double>(n);
  const double keep = 1.0 - config.dropout;

  Rng rng(config.seed);
  std::bernoulli_distribution keep_unit(keep);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  ProbeRun run;
  run.config = config;
  run.model = model;
  run.val_accuracy = -1.0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index m = std::min<Eigen::Index>(config.batch_size, n - start);
      Eigen::MatrixXd x(m, d);
      Eigen::MatrixXd y = Eigen::MatrixXd::Zero(m, n_targets);
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index r = order[static_cast<std::size_t>(start + i)];
        x.row(i) = train.features.row(r);
        y(i, train.labels[static_cast<std::size_t>(r)]) = 1.0;
      }
      if (config.dropout > 0.0) {
        for (Eigen::Index i = 0; i < m; ++i)
          for (Eigen::Index j = 0; j < d; ++j) x(i, j) = keep_unit(rng) ? x(i, j) / keep : 0.0;
      }
      Eigen::MatrixXd logits = x * model.weights.transpose();
      logits.rowwise() += model.bias.transpose();
      const Eigen::MatrixXd residual = softmax_rows(std::move(logits)) - y;
      model.weights.noalias() -= (config.learning_rate / static_cast<double>(m)) * residual.transpose() * x;
      model.bias -= (config.learning_rate / static_cast<double>(m)) * residual.colwise().sum().transpose();
      if (shrink > 0.0) model.weights = singular_value_shrink(model.weights, shrink);
      if (!model.weights.allFinite() || !model.bias.allFinite()) throw NonFinite("probe parameters (diverged)");
    }
    const double val_acc = accuracy(model, val);
    if (val_acc > run.val_accuracy) {
      run.val_accuracy = val_acc;
      run.model = model;
      run.best_epoch = epoch;
    }
  }
  run.nuclear_norm = nuclear_norm(run.model.weights);
  return run;
}

std::vector<int> control_labels(const std::vector<std::string>& ids, std::size_t n_targets, std::uint64_t seed) {
  if (n_targets == 0) throw InvalidArgument("control labels need a non-empty target set");
  std::vector<int> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(static_cast<int>(splitmix64(seed ^ fnv1a(id)) % n_targets));
  return out;
}

std::vector<EmbeddingRecord> make_control_labels(std::vector<EmbeddingRecord> records, const std::string& tag_key,
                                                 std::uint64_t seed) {
  std::set<std::string> values;
  for (const auto& r : records)
    if (auto v = r.tag(tag_key)) values.insert(*v);
  if (values.empty()) return records;
  const std::vector<std::string> targets(values.begin(), values.end());
  for (auto& r : records) {
    const auto label = control_labels({r.id}, targets.size(), seed).front();
    r.tags[tag_key] = targets[static_cast<std::size_t>(label)];
  }
  return records;
}

std::pair<ProbeData, std::vector<std::string>> make_probe_data(const std::vector<EmbeddingRecord>& records,
                                                               const std::string& tag_key) {
  std::set<std::string> values;
  for (const auto& r : records) {
    auto v = r.tag(tag_key);
    if (!v) throw InvalidArgument("record '" + r.id + "' lacks tag '" + tag_key + "'");
    values.insert(*v);
  }
  std::vector<std::string> targets(values.begin(), values.end());
  ProbeData data;
  data.features = to_matrix<double>(records);
  for (const auto& r : records) {
    data.labels.push_back(static_cast<int>(std::lower_bound(targets.begin(), targets.end(), *r.tag(tag_key)) - targets.begin()));
    data.ids.push_back(r.id);
  }
  return {std::move(data), std::move(targets)};
}

double ProbeReport::mean_selectivity() const {
  if (probes.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) sum += probes[i].test_accuracy - controls[i].test_accuracy;
  return sum / static_cast<double>(probes.size());
}

ProbeReport run_probe_sweep(const std::vector<EmbeddingRecord>& records, const SweepOptions& options) {
  auto [data, targets] = make_probe_data(records, options.tag_key);
  return run_probe_sweep(data, targets, options);
}

ProbeReport run_probe_sweep(const ProbeData& data, const std::vector<std::string>& target_set,
                            const SweepOptions& options) {
  if (options.n_probes < 1) throw InvalidArgument("n_probes must be >= 1");
  const auto [lam_lo, lam_hi] = options.lambda_range;
  const auto [drop_lo, drop_hi] = options.dropout_range;
  if (!(lam_lo > 0 && lam_hi >= lam_lo)) throw InvalidArgument("lambda range must be positive and ordered");
  if (!(drop_lo >= 0 && drop_hi < 1 && drop_hi >= drop_lo)) throw InvalidArgument("dropout range must lie in [0, 1)");

  std::vector<std::string> ids = data.ids;
  if (ids.empty())
    for (std::size_t i = 0; i < data.size(); ++i) ids.push_back(std::to_string(i));

  const ProbeSplit split = split_for_probing(data.labels, derive_seed(options.seed, "probe-split"));
  ProbeData control = data;
  control.labels = control_labels(ids, target_set.size(), derive_seed(options.seed, "control-labels"));

  const ProbeData train = data.subset(split.train), val = data.subset(split.val), test = data.subset(split.test);
  const ProbeData ctrain = control.subset(split.train), cval = control.subset(split.val),
                  ctest = control.subset(split.test);

  // Hyperparameters are drawn serially so they do not depend on scheduling.
  std::vector<ProbeConfig> configs;
  Rng hp(derive_seed(options.seed, "hyperparameters"));
  std::uniform_real_distribution<double> log_lambda(std::log10(lam_lo), std::log10(lam_hi));
  std::uniform_real_distribution<double> dropout(drop_lo, drop_hi);
  for (int i = 0; i < options.n_probes; ++i) {
    ProbeConfig c;
    c.lambda = std::pow(10.0, log_lambda(hp));
    c.dropout = dropout(hp);
    c.epochs = options.epochs;
    c.seed = derive_seed(options.seed, static_cast<std::uint64_t>(i));
    c.target_set = target_set;
    c.learning_rate = options.learning_rate;
    c.batch_size = options.batch_size;
    configs.push_back(std::move(c));
  }

  ProbeReport report;
  report.target_set = target_set;
  report.probes.resize(configs.size());
  report.controls.resize(configs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      ProbeRun probe = train_probe(train, val, configs[i]);
      probe.test_accuracy = accuracy(probe.model, test);
      ProbeConfig cc = configs[i];
      cc.is_control = true;
      ProbeRun ctrl = train_probe(ctrain, cval, cc);
      ctrl.test_accuracy = accuracy(ctrl.model, ctest);
      report.probes[i] = std::move(probe);
      report.controls[i] = std::move(ctrl);
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads ? options.threads : std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(configs.size())));
  std::vector<std::future<void>> pool;
  for (unsigned t = 0; t < threads; ++t) pool.push_back(std::async(std::launch::async, worker));
  for (auto& f : pool) f.get();

  for (std::size_t i = 0; i < configs.size(); ++i) {
    const double sel = report.probes[i].test_accuracy - report.controls[i].test_accuracy;
    for (const ProbeRun* run : {&report.probes[i], &report.controls[i]}) {
      report.rows.push_back({static_cast<int>(i), run->config.is_control, run->config.lambda, run->config.dropout,
                             run->nuclear_norm, run->val_accuracy, run->test_accuracy, sel});
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const ProbeReportRow& a, const ProbeReportRow& b) {
    if (a.nuclear_norm != b.nuclear_norm) return a.nuclear_norm < b.nuclear_norm;
    if (a.probe_id != b.probe_id) return a.probe_id < b.probe_id;
    return a.is_control < b.is_control;
  });
  return report;
}

void write_probe_report_tsv(const ProbeReport& report, std::ostream& sink) {
  sink << "probe_id\tis_control\tlambda\tdropout\tnuclear_norm\tval_acc\ttest_acc\tselectivity\n";
  sink << std::setprecision(10);
  for (const auto& r : report.rows) {
    sink << r.probe_id << '\t' << (r.is_control ? 1 : 0) << '\t' << r.lambda << '\t' << r.dropout << '\t'
         << r.nuclear_norm << '\t' << r.val_accuracy << '\t' << r.test_accuracy << '\t' << r.selectivity << '\n';
  }
}

}  // namespace repprobe
