#pragma once
// Staged pipeline: each stage reads the artifacts of earlier stages under the
// output directory, writes its own under output_dir/<stage>/ and records a
// manifest of the config and input/output hashes.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "repprobe/dataset.hpp"

namespace repprobe {

enum class Stage { Ingest, GenPairs, GenQuads, Balance, Knn, Probe, Cluster, Stats, Report };

inline constexpr std::array kAllStages{Stage::Ingest, Stage::GenPairs, Stage::GenQuads,
                                       Stage::Balance, Stage::Knn,      Stage::Probe,
                                       Stage::Cluster, Stage::Stats,    Stage::Report};

std::string_view to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view text);

/// Dataset names shared by every stage: one per pair type plus "quad".
inline constexpr std::array<std::string_view, 4> kDatasetNames{"drug_variant", "drug_gene", "variant_gene", "quad"};

struct RunConfig {
  std::string kb_path;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  bool strict_ingest = true;
  double train_fraction = 0.66;
  int knn_k = 5;
  std::vector<int> knn_k_grid{1, 3, 5, 11};
  int cv_folds = 10;
  int probe_count = 50;
  int probe_epochs = 5;
  std::pair<double, double> lambda_range{1e-4, 1e1};
  std::pair<double, double> dropout_range{0.0, 0.5};
  std::string probe_tag = "entity_kind";
  int min_cluster_size = 120;
  int n_clusters = 5;
  bool dimension_linkage = false;
  ImbalanceThresholds thresholds;
  std::vector<std::string> embeddings;            // embedding files for probe and cluster
  std::map<std::string, std::string> projections; // embedding file stem -> id/x/y TSV
  std::map<std::string, std::string> scores;      // model -> directory of scores_<dataset>_<set>.jsonl
  unsigned threads = 0;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Pretty-printed JSON with every field.
std::string config_to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys and wrong types throw ConfigError.
RunConfig config_from_json(std::string_view text, RunConfig base = {});
/// Reads a .json config file; other extensions throw ConfigError.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Validates ranges; throws ConfigError.
void validate_config(const RunConfig& config);
/// SHA-256 over the config with output_dir and threads left out.
std::string config_hash(const RunConfig& config);

struct StageResult {
  Stage stage = Stage::Ingest;
  bool up_to_date = false;           // manifest matched, nothing was rewritten
  std::vector<std::string> outputs;  // relative to the stage directory
};

/// Runs one stage. Throws MissingInput when earlier artifacts are absent.
StageResult run_stage(Stage stage, const RunConfig& config);

/// Every stage in order; probe and cluster only when embeddings are configured.
std::vector<StageResult> run_pipeline(const RunConfig& config);

}  // namespace repprobe
