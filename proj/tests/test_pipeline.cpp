#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "repprobe/embedding_store.hpp"
#include "repprobe/error.hpp"
#include "repprobe/hash.hpp"
#include "repprobe/pipeline.hpp"

using namespace repprobe;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("repprobe_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig fixture_config(const fs::path& out, std::uint64_t seed = 7) {
  RunConfig c;
  c.kb_path = REPPROBE_FIXTURE_DIR "/mini.json";
  c.output_dir = out.string();
  c.seed = seed;
  c.cv_folds = 3;
  c.threads = 2;
  return c;
}

std::map<std::string, std::string> hashes_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json")
      out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  return out;
}

fs::path write_embeddings_fixture(const fs::path& dir) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n01;
  const char* kinds[] = {"drug", "gene", "variant"};
  std::vector<EmbeddingRecord> recs;
  for (int i = 0; i < 60; ++i) {
    EmbeddingRecord r{"e" + std::to_string(i), {{"entity_kind", kinds[i % 3]}}, {}};
    for (int j = 0; j < 6; ++j) r.vector.push_back(n01(rng) + (j == i % 3 ? 4.f : 0.f));
    recs.push_back(r);
  }
  EmbeddingFileHeader h;
  h.dimension = 6;
  h.count = recs.size();
  h.model = "synthetic";
  const auto path = dir / "toy.emb";
  write_embeddings_file(path, h, recs);
  return path;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(REPPROBE_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("stage names") {
  for (Stage s : kAllStages) CHECK(parse_stage(to_string(s)) == s);
  CHECK_FALSE(parse_stage("nope").has_value());
}

TEST_CASE("config round trip and validation") {
  RunConfig c;
  c.kb_path = "kb.json";
  c.seed = 0xFFFFFFFFFFFFFFFFull;
  c.projections["toy"] = "p.tsv";
  c.scores["bert"] = "scores/";
  c.thresholds.true_imbalanced = 0.8;
  CHECK(config_from_json(config_to_json(c)) == c);

  CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"seed": -1})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"knn_k": "five"})"), ConfigError);
  auto partial = config_from_json(R"({"knn_k": 3, "thresholds": {"true_imb": 0.9, "false_imb": 0.1}})");
  CHECK(partial.knn_k == 3);
  CHECK(partial.probe_count == 50);
  CHECK(partial.thresholds.false_imbalanced == 0.1);

  auto dir = scratch("config");
  std::ofstream(dir / "run.toml") << "seed = 3\n";
  CHECK_THROWS_AS(load_config(dir / "run.toml"), ConfigError);

  RunConfig bad;
  bad.train_fraction = 1.5;
  CHECK_THROWS_AS(validate_config(bad), ConfigError);

  RunConfig moved = c;
  moved.output_dir = "elsewhere";
  moved.threads = 9;
  CHECK(config_hash(moved) == config_hash(c));
  moved.seed = 1;
  CHECK(config_hash(moved) != config_hash(c));
}

TEST_CASE("defaults") {
  RunConfig c;
  CHECK(c.train_fraction == 0.66);
  CHECK(c.knn_k == 5);
  CHECK(c.probe_count == 50);
  CHECK(c.probe_epochs == 5);
  CHECK(c.min_cluster_size == 120);
  CHECK(c.thresholds.true_imbalanced == 0.70);
  CHECK(c.thresholds.false_imbalanced == 0.30);
}

TEST_CASE("stages cache on hashes and fail on missing inputs") {
  auto out = scratch("stages");
  auto c = fixture_config(out);
  CHECK_THROWS_AS(run_stage(Stage::GenPairs, c), MissingInput);
  try {
    run_stage(Stage::Probe, c);
    FAIL("expected MissingInput");
  } catch (const MissingInput& e) {
    CHECK(e.stage() == "probe");
  }

  CHECK_FALSE(run_stage(Stage::Ingest, c).up_to_date);
  auto first = run_stage(Stage::GenPairs, c);
  CHECK_FALSE(first.up_to_date);
  const auto before = hashes_under(out / "gen-pairs");
  CHECK(run_stage(Stage::GenPairs, c).up_to_date);
  CHECK(hashes_under(out / "gen-pairs") == before);

  // A damaged output forces a rerun that restores it.
  std::ofstream(out / "gen-pairs" / "drug_variant.jsonl") << "garbage\n";
  CHECK_FALSE(run_stage(Stage::GenPairs, c).up_to_date);
  CHECK(hashes_under(out / "gen-pairs") == before);

  // A different seed changes the artifacts.
  auto other = c;
  other.seed = 8;
  CHECK_FALSE(run_stage(Stage::GenPairs, other).up_to_date);
  CHECK(hashes_under(out / "gen-pairs") != before);
}

TEST_CASE("full pipeline with embeddings") {
  auto out = scratch("full");
  auto c = fixture_config(out / "out");
  c.embeddings = {write_embeddings_fixture(out).string()};
  c.probe_count = 4;
  c.min_cluster_size = 10;
  c.n_clusters = 3;
  auto results = run_pipeline(c);
  CHECK(results.size() == kAllStages.size());
  for (const char* f : {"probe/toy/probe_report.tsv", "cluster/toy/linkage.tsv", "cluster/toy/clusters.tsv",
                        "cluster/toy/projection.tsv", "cluster/toy/density_clusters.tsv", "stats/auc_summary.tsv",
                        "report/summary.tsv", "knn/cv.tsv", "balance/stats.tsv"})
    CHECK_MESSAGE(fs::exists(out / "out" / f), f);
  for (const auto& r : run_pipeline(c)) CHECK(r.up_to_date);

  std::ifstream summary(out / "out" / "report" / "summary.tsv");
  std::string header;
  std::getline(summary, header);
  CHECK_FALSE(header.empty());
}

TEST_CASE("external projection replaces PCA") {
  auto out = scratch("projection");
  auto c = fixture_config(out / "out");
  c.embeddings = {write_embeddings_fixture(out).string()};
  {
    std::ofstream p(out / "toy.tsv");
    p << "id\tx\ty\n";
    for (int i = 0; i < 60; ++i) p << "e" << i << '\t' << i + 1 << '\t' << -(i + 1) << '\n';
  }
  c.projections["toy"] = (out / "toy.tsv").string();
  c.min_cluster_size = 10;
  for (Stage s : {Stage::Ingest, Stage::Cluster}) run_stage(s, c);
  std::ifstream in(out / "out" / "cluster" / "toy" / "projection.tsv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(first == "e0\t1\t-1");

  std::ofstream(out / "toy.tsv", std::ios::app) << "stranger\t1\t1\n";
  CHECK_THROWS_AS(run_stage(Stage::Cluster, c), UnknownId);
}

TEST_CASE("command-line exit codes") {
  auto out = scratch("cli");
  const std::string kb = std::string("--kb ") + REPPROBE_FIXTURE_DIR "/mini.json --out " + out.string();
  CHECK(cli("") == 1);
  CHECK(cli("ingest --no-such-flag") == 1);
  CHECK(cli("gen-pairs " + kb) == 1);
  CHECK(cli("ingest " + kb + " --train-fraction 2") == 1);
  CHECK(cli("ingest " + kb) == 0);
  CHECK(cli("gen-pairs " + kb + " --seed 7") == 0);
  CHECK(cli("probe " + kb) == 1);
  CHECK(cli("ingest --kb " + (out / "missing.json").string() + " --out " + out.string()) != 0);
  CHECK(cli("config " + kb + " --seed 12") == 0);
  CHECK(cli("fetch --base-url http://127.0.0.1:9 --ids 1 --cache-dir " + (out / "cache").string()) == 2);
}
