// repprobe: staged command-line driver for the analysis pipeline.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "repprobe/error.hpp"
#include "repprobe/fetch.hpp"
#include "repprobe/pipeline.hpp"

namespace {

struct Flags {
  std::optional<std::string> kb, out, config, probe_tag;
  std::optional<std::uint64_t> seed;
  std::optional<double> train_fraction, true_imb, false_imb;
  std::optional<int> knn_k, cv_folds, probe_count, probe_epochs, min_cluster_size, n_clusters;
  std::optional<unsigned> threads;
  std::vector<std::string> embeddings, projections, scores;
  bool lenient = false;
  bool dimension_linkage = false;
};

void add_run_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--kb", f.kb, "Knowledge base file (.json or .tsv)");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--seed", f.seed, "Run seed");
  sub->add_option("--config", f.config, "JSON run configuration");
  sub->add_option("--train-fraction", f.train_fraction);
  sub->add_option("--true-imb", f.true_imb, "True-imbalance threshold (strictly above)");
  sub->add_option("--false-imb", f.false_imb, "False-imbalance threshold (strictly below)");
  sub->add_option("--knn-k", f.knn_k);
  sub->add_option("--cv-folds", f.cv_folds);
  sub->add_option("--probe-count", f.probe_count);
  sub->add_option("--probe-epochs", f.probe_epochs);
  sub->add_option("--probe-tag", f.probe_tag, "Record tag used as probe target");
  sub->add_option("--min-cluster-size", f.min_cluster_size);
  sub->add_option("--n-clusters", f.n_clusters);
  sub->add_option("--threads", f.threads);
  sub->add_option("--embeddings", f.embeddings, "Embedding files (repeatable)");
  sub->add_option("--projection", f.projections, "STEM=PATH external 2D projection (repeatable)");
  sub->add_option("--scores", f.scores, "MODEL=DIR score files of another model (repeatable)");
  sub->add_flag("--lenient", f.lenient, "Collect malformed KB records instead of failing");
  sub->add_flag("--dimension-linkage", f.dimension_linkage, "Also cluster embedding dimensions");
}

std::pair<std::string, std::string> split_assignment(const std::string& s, const char* flag) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
    throw repprobe::ConfigError(std::string(flag) + " expects KEY=VALUE, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

repprobe::RunConfig resolve(const Flags& f) {
  repprobe::RunConfig c;
  if (f.config) c = repprobe::load_config(*f.config, c);
  if (f.kb) c.kb_path = *f.kb;
  if (f.out) c.output_dir = *f.out;
  if (f.seed) c.seed = *f.seed;
  if (f.train_fraction) c.train_fraction = *f.train_fraction;
  if (f.true_imb) c.thresholds.true_imbalanced = *f.true_imb;
  if (f.false_imb) c.thresholds.false_imbalanced = *f.false_imb;
  if (f.knn_k) c.knn_k = *f.knn_k;
  if (f.cv_folds) c.cv_folds = *f.cv_folds;
  if (f.probe_count) c.probe_count = *f.probe_count;
  if (f.probe_epochs) c.probe_epochs = *f.probe_epochs;
  if (f.probe_tag) c.probe_tag = *f.probe_tag;
  if (f.min_cluster_size) c.min_cluster_size = *f.min_cluster_size;
  if (f.n_clusters) c.n_clusters = *f.n_clusters;
  if (f.threads) c.threads = *f.threads;
  if (!f.embeddings.empty()) c.embeddings = f.embeddings;
  for (const auto& p : f.projections) {
    auto [stem, path] = split_assignment(p, "--projection");
    c.projections.insert_or_assign(stem, path);
  }
  for (const auto& s : f.scores) {
    auto [model, dir] = split_assignment(s, "--scores");
    c.scores.insert_or_assign(model, dir);
  }
  if (f.lenient) c.strict_ingest = false;
  if (f.dimension_linkage) c.dimension_linkage = true;
  repprobe::validate_config(c);
  return c;
}

void print_result(const repprobe::StageResult& r) {
  std::cout << repprobe::to_string(r.stage) << ": ";
  if (r.up_to_date)
    std::cout << "up to date\n";
  else
    std::cout << "wrote " << r.outputs.size() << " file(s)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repprobe: knowledge-base datasets, KNN baseline, probes, clustering and bias statistics"};
  app.require_subcommand(1);
  Flags flags;

  std::vector<std::pair<CLI::App*, repprobe::Stage>> stage_cmds;
  for (repprobe::Stage s : repprobe::kAllStages) {
    auto* sub = app.add_subcommand(std::string(repprobe::to_string(s)), "Run the " +
                                                                            std::string(repprobe::to_string(s)) +
                                                                            " stage");
    add_run_flags(sub, flags);
    stage_cmds.emplace_back(sub, s);
  }
  auto* all = app.add_subcommand("all", "Run every stage in order");
  add_run_flags(all, flags);
  auto* show = app.add_subcommand("config", "Print the resolved configuration as JSON");
  add_run_flags(show, flags);

  std::string base_url, fetch_out;
  std::vector<std::int64_t> ids;
  std::optional<std::string> cache_dir;
  auto* fetch = app.add_subcommand("fetch", "Download knowledge-base records over HTTP");
  fetch->add_option("--base-url", base_url, "Service root, e.g. https://example.org/api")->required();
  fetch->add_option("--ids", ids, "Variant ids")->required()->delimiter(',');
  fetch->add_option("--output", fetch_out, "Write payloads here instead of stdout");
  fetch->add_option("--cache-dir", cache_dir, "Cache directory (default: $REPPROBE_CACHE)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fetch->parsed()) {
      repprobe::FetchOptions opts;
      opts.cache_dir = cache_dir ? std::filesystem::path(*cache_dir) : repprobe::default_cache_dir();
      const std::string payload = repprobe::fetch_kb(base_url, ids, opts);
      if (fetch_out.empty()) {
        std::cout << payload;
      } else {
        std::ofstream out(fetch_out, std::ios::binary);
        if (!(out << payload)) throw repprobe::Error("cannot write " + fetch_out, false);
      }
      return 0;
    }
    const repprobe::RunConfig config = resolve(flags);
    if (show->parsed()) {
      std::cout << repprobe::config_to_json(config);
      return 0;
    }
    if (all->parsed()) {
      for (const auto& r : repprobe::run_pipeline(config)) print_result(r);
      return 0;
    }
    for (const auto& [sub, stage] : stage_cmds)
      if (sub->parsed()) print_result(repprobe::run_stage(stage, config));
    return 0;
  } catch (const repprobe::Error& e) {
    std::cerr << "repprobe: " << e.what() << '\n';
    return e.validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "repprobe: " << e.what() << '\n';
    return 2;
  }
}
