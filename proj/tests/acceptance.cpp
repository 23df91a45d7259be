// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "helpers.hpp"
#include "oracles.hpp"
#include "repprobe/cluster.hpp"
#include "repprobe/dataset.hpp"
#include "repprobe/embedding_store.hpp"
#include "repprobe/hash.hpp"
#include "repprobe/kb.hpp"
#include "repprobe/pipeline.hpp"
#include "repprobe/probe.hpp"
#include "repprobe/stats.hpp"

using namespace repprobe;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("repprobe_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const std::string kFixture = REPPROBE_FIXTURE_DIR "/mini.json";

Verdict nuclear_norm_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> scale(-5, 5);
  double worst = 0, worst_scaling = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const Eigen::Index r = 1 + static_cast<Eigen::Index>(rng() % 16);
    const Eigen::Index c = 1 + static_cast<Eigen::Index>(rng() % 1024);
    Eigen::MatrixXd w(r, c);
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = n01(rng);
    if (rep % 2) w.transposeInPlace();
    const double got = nuclear_norm(w);
    const double want = oracle::nuclear_norm(w);
    worst = std::max(worst, std::abs(got - want) / want);
    const double k = scale(rng);
    const double scaled = nuclear_norm(Eigen::MatrixXd(k * w));
    worst_scaling = std::max(worst_scaling, std::abs(scaled - std::abs(k) * got) / (std::abs(k) * got));
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-9 && worst_scaling <= 1e-9 && elapsed < 10.0,
          "max rel err " + num(worst) + ", scaling err " + num(worst_scaling) + ", " + num(elapsed) + " s"};
}

Verdict gradient_check() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n01;
  double worst = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::Index t = 2 + static_cast<Eigen::Index>(rng() % 4);
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 7);
    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng() % 16);
    ProbeData data;
    data.features.resize(n, d);
    for (Eigen::Index i = 0; i < data.features.size(); ++i) data.features(i) = n01(rng);
    for (Eigen::Index i = 0; i < n; ++i) data.labels.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(t)));
    ProbeModel m{Eigen::MatrixXd(t, d), Eigen::VectorXd(t)};
    for (Eigen::Index i = 0; i < m.weights.size(); ++i) m.weights(i) = n01(rng);
    for (Eigen::Index i = 0; i < t; ++i) m.bias(i) = n01(rng);
    const double lambda = std::exp(std::uniform_real_distribution<double>(std::log(1e-3), std::log(10.0))(rng));
    const auto loss = probe_loss(m, data, lambda);
    const Eigen::Index nw = t * d;
    Eigen::VectorXd theta(nw + t), analytic(nw + t);
    theta << Eigen::Map<const Eigen::VectorXd>(m.weights.data(), nw), m.bias;
    analytic << Eigen::Map<const Eigen::VectorXd>(loss.grad_weights.data(), nw), loss.grad_bias;
    auto f = [&](const Eigen::VectorXd& p) {
      ProbeModel q{Eigen::Map<const Eigen::MatrixXd>(p.data(), t, d), p.tail(t)};
      return probe_loss(q, data, lambda).value;
    };
    const Eigen::VectorXd fd = oracle::finite_difference(f, theta, 1e-6);
    worst = std::max(worst, (fd - analytic).norm() / analytic.norm());
  }
  return {worst <= 1e-4, "max rel err " + num(worst) + " over 20 probes"};
}

std::vector<EmbeddingRecord> cluster_records(bool noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n01;
  const char* labels[] = {"drug", "gene", "variant", "disease"};
  std::vector<EmbeddingRecord> recs;
  for (int i = 0; i < 2000; ++i) {
    EmbeddingRecord r{"x" + std::to_string(i), {{"entity_kind", labels[i % 4]}}, std::vector<float>(64)};
    for (int j = 0; j < 64; ++j) r.vector[static_cast<std::size_t>(j)] = n01(rng);
    if (!noise) r.vector[static_cast<std::size_t>(i % 4)] += 4.0f;
    recs.push_back(std::move(r));
  }
  return recs;
}

Verdict selectivity_check() {
  const auto t0 = Clock::now();
  SweepOptions opt;
  opt.seed = 303;
  const double structured = run_probe_sweep(cluster_records(false, 1), opt).mean_selectivity();
  const double noise = run_probe_sweep(cluster_records(true, 2), opt).mean_selectivity();
  const double elapsed = seconds_since(t0);
  return {structured > 0.3 && std::abs(noise) < 0.05 && elapsed < 120.0,
          "clustered " + num(structured) + ", noise " + num(noise) + ", " + num(elapsed) + " s"};
}

// Planted construction: drugs D0..D3 get exact train fractions 0.7, 0.3,
// 0.8 and 0.2; the rest are random. Quadruples in the test set mix planted
// drugs with each other and with neutral elements.
Verdict balancing_check() {
  std::mt19937_64 rng(404);
  auto drug = [](int i) { return Entity(EntityKind::Drug, "D" + std::to_string(i)); };
  auto variant = [](int i) { return Entity(EntityKind::Variant, "V" + std::to_string(i)); };
  auto pair = [&](int d, int v, bool label) {
    return make_example(EntityPair{drug(d), variant(v), PairType::DrugVariant, label}, KnowledgeBase{});
  };
  auto quad = [&](int v, std::vector<int> drugs, bool sensitive) {
    Quadruple q{variant(v), Entity(EntityKind::Gene, "G" + std::to_string(v % 3)),
                Entity(EntityKind::Disease, "X" + std::to_string(v % 2)), {},
                sensitive ? Significance::SensitivityResponse : Significance::Resistance, {}};
    for (int d : drugs) q.drugs.push_back(drug(d));
    return make_example(q, KnowledgeBase{});
  };

  DatasetSplit split;
  const int planted[4][2] = {{7, 10}, {3, 10}, {8, 10}, {2, 10}};
  int next_variant = 100;
  for (int d = 0; d < 4; ++d)
    for (int k = 0; k < planted[d][1]; ++k) split.train.push_back(pair(d, next_variant++, k < planted[d][0]));
  while (split.train.size() < 330) {
    const int d = 4 + static_cast<int>(rng() % 30), v = static_cast<int>(rng() % 40);
    split.train.push_back(pair(d, v, rng() % 4 != 0 ? (d % 3 == 0) : (rng() % 2 == 0)));
  }
  for (int i = 0; i < 20; ++i) split.test.push_back(pair(i % 4, 40 + i, i % 2));
  for (int i = 0; i < 20; ++i) split.test.push_back(quad(i % 40, {i % 4, (i + 1) % 4}, i % 2));
  for (int i = 0; i < 10; ++i) split.test.push_back(quad(i, {2, 3, 4 + i}, i % 2));
  while (split.test.size() < 170) {
    if (rng() % 2) {
      split.test.push_back(pair(static_cast<int>(rng() % 34), static_cast<int>(rng() % 60), rng() % 2));
    } else {
      std::vector<int> ds{static_cast<int>(rng() % 34)};
      if (rng() % 3 == 0) ds.push_back(static_cast<int>(rng() % 34));
      if (ds.size() == 2 && ds[0] == ds[1]) ds.pop_back();
      split.test.push_back(quad(static_cast<int>(rng() % 60), ds, rng() % 2));
    }
  }

  auto to_oracle = [](const LabeledExample& e) {
    oracle::Example o;
    for (const auto& ent : e.entities()) o.elements.push_back(std::string(to_string(ent.kind())) + ":" + ent.name());
    o.label = e.label;
    o.quad = e.is_quadruple();
    return o;
  };
  std::vector<oracle::Example> train;
  for (const auto& e : split.train) train.push_back(to_oracle(e));
  const auto v = oracle::verdicts(train, 0.70, 0.30);
  std::set<std::string> expected;
  std::size_t mixed_quads = 0;
  for (const auto& e : split.test) {
    const auto o = to_oracle(e);
    if (!oracle::imbalanced(o, v)) {
      expected.insert(e.id);
      if (o.quad) {
        bool has_true = false, has_false = false;
        for (const auto& el : o.elements) {
          auto it = v.find(el);
          if (it != v.end()) (it->second == 1 ? has_true : has_false) |= it->second != 0;
        }
        mixed_quads += has_true && has_false;
      }
    }
  }

  const auto balanced = balance_test_set(split, compute_imbalanced_entities(split.train));
  std::set<std::string> got;
  for (const auto& e : balanced.balanced_test) got.insert(e.id);

  const bool thresholds_hit = v.at("drug:D0") == 0 && v.at("drug:D1") == 0 && v.at("drug:D2") == 1 && v.at("drug:D3") == -1;
  const std::size_t total = split.train.size() + split.test.size();
  return {got == expected && thresholds_hit && mixed_quads > 0 && total == 500,
          std::to_string(total) + " examples, " + std::to_string(got.size()) + "/" + std::to_string(split.test.size()) +
              " retained, " + std::to_string(mixed_quads) + " mixed quadruples retained, sets " +
              (got == expected ? "equal" : "differ")};
}

std::string pair_key(const LabeledExample& e) {
  const auto& p = std::get<EntityPair>(e.source);
  return std::string(to_string(p.type)) + "|" + p.a.name() + "|" + p.b.name();
}

Verdict dataset_invariants_check() {
  auto out = scratch("invariants");
  RunConfig c;
  c.kb_path = kFixture;
  c.output_dir = out.string();
  c.seed = 7;
  run_stage(Stage::Ingest, c);
  run_stage(Stage::GenPairs, c);
  run_stage(Stage::GenQuads, c);

  std::ifstream kb_in(kFixture);
  const auto kb = filter_predictive_supports(parse_kb(kb_in, KbFormat::Json).kb);
  auto attested = [&](const Entity& a, const Entity& b) {
    for (const auto& item : kb.items()) {
      const auto ents = item.entities();
      if (std::find(ents.begin(), ents.end(), a) != ents.end() && std::find(ents.begin(), ents.end(), b) != ents.end())
        return true;
    }
    return false;
  };

  std::string detail;
  bool ok = true;
  for (PairType t : kAllPairTypes) {
    std::ifstream in(out / "gen-pairs" / (std::string(to_string(t)) + ".jsonl"));
    const auto split = read_dataset_jsonl(in);
    std::vector<LabeledExample> all(split.train);
    all.insert(all.end(), split.test.begin(), split.test.end());
    std::size_t pos = 0, neg = 0, bad_false = 0, missing_true = 0;
    std::set<std::string> keys;
    for (const auto& e : all) {
      const auto& p = std::get<EntityPair>(e.source);
      (e.label ? pos : neg)++;
      const bool att = attested(p.a, p.b);
      if (!e.label && att) ++bad_false;
      if (e.label && !att) ++missing_true;
      keys.insert(pair_key(e));
    }
    const std::size_t dups = all.size() - keys.size();
    ok = ok && pos == neg && pos > 0 && bad_false == 0 && missing_true == 0 && dups == 0;
    detail += std::string(to_string(t)) + " " + std::to_string(pos) + "/" + std::to_string(neg) + " dup " +
              std::to_string(dups) + " attested-false " + std::to_string(bad_false) + "; ";
  }
  std::ifstream qin(out / "gen-quads" / "quad.jsonl");
  const auto quads = read_dataset_jsonl(qin);
  std::set<std::vector<std::string>> qkeys;
  std::size_t nq = 0;
  for (const auto* part : {&quads.train, &quads.test})
    for (const auto& e : *part) {
      qkeys.insert(std::get<Quadruple>(e.source).key());
      ++nq;
    }
  ok = ok && nq == qkeys.size() && nq > 0;
  detail += "quad " + std::to_string(nq) + " unique " + std::to_string(qkeys.size());
  return {ok, detail};
}

Verdict ward_check() {
  std::mt19937_64 rng(505);
  std::normal_distribution<double> n01;
  int agree = 0, monotone = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 39);
    const int d = 1 + static_cast<int>(rng() % 5);
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = n01(rng);
    // Some instances get duplicated rows to exercise ties.
    if (rep % 10 == 0 && n > 3) x.row(1) = x.row(0);
    const auto l = hac_ward(x);
    agree += testing::same_ward_tree(l, oracle::naive_ward(x), static_cast<std::size_t>(n), 1e-9);
    monotone += testing::monotone(l);
  }
  return {agree == 100 && monotone == 100,
          std::to_string(agree) + "/100 match the oracle, " + std::to_string(monotone) + "/100 monotone"};
}

Verdict density_check() {
  const auto blobs = testing::gaussian_blobs(200, 10.0, 606);
  const auto a = density_cluster(blobs, 50);
  const double assigned = 1.0 - static_cast<double>(a.noise()) / static_cast<double>(a.size());
  // Each cluster should be one blob.
  bool pure = true;
  std::map<int, std::set<bool>> side;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.cluster[i] >= 0) side[a.cluster[i]].insert(i >= 200);
  for (const auto& [k, s] : side) pure = pure && s.size() == 1;

  std::mt19937_64 rng(607);
  std::uniform_real_distribution<double> u(0, 1);
  Eigen::MatrixXd uniform(50, 2);
  for (Eigen::Index i = 0; i < uniform.size(); ++i) uniform(i) = u(rng);
  const auto b = density_cluster(uniform, 60);
  const auto c = density_cluster(Eigen::MatrixXd::Constant(300, 2, 1.0), 120);
  return {a.n_clusters() == 2 && assigned >= 0.95 && pure && b.n_clusters() == 0 && c.n_clusters() == 1,
          "blobs " + std::to_string(a.n_clusters()) + " clusters, " + num(100 * assigned) + "% assigned; uniform " +
              std::to_string(b.n_clusters()) + " clusters; repeated point " + std::to_string(c.n_clusters()) +
              " cluster"};
}

Verdict rank_statistics_check() {
  std::mt19937_64 rng(707);
  int auc_ok = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 10) / 9.0;
      y[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(rng() % 2);
    }
    auc_ok += auc(s, y) == oracle::auc(s, y);
  }
  int sp_total = 0, sp_ok = 0, mw_total = 0, mw_ok = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 3 + rng() % 6;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng() % 5);
      y[i] = static_cast<double>(rng() % 5);
    }
    const bool cx = std::adjacent_find(x.begin(), x.end(), std::not_equal_to<>()) == x.end();
    const bool cy = std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end();
    if (cx || cy) continue;
    ++sp_total;
    sp_ok += std::abs(spearman(x, y).p_value - oracle::spearman_p(x, y)) <= 1e-12;
  }
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t na = 1 + rng() % 5, nb = 1 + rng() % (8 - na);
    std::vector<double> a(na), b(nb);
    for (auto& v : a) v = static_cast<double>(rng() % 6);
    for (auto& v : b) v = static_cast<double>(rng() % 6);
    ++mw_total;
    const auto r = mann_whitney_u(a, b);
    mw_ok += std::abs(r.p_value - oracle::mann_whitney_p(a, b)) <= 1e-12 &&
             2.0 * r.u == static_cast<double>(oracle::doubled_u(a, b));
  }
  return {auc_ok == 1000 && sp_ok == sp_total && mw_ok == mw_total,
          "auc " + std::to_string(auc_ok) + "/1000, spearman " + std::to_string(sp_ok) + "/" + std::to_string(sp_total) +
              ", mann-whitney " + std::to_string(mw_ok) + "/" + std::to_string(mw_total)};
}

// Scores rise with entity frequency whatever the label, plus noise.
Verdict bias_direction_check() {
  std::mt19937_64 rng(808);
  std::normal_distribution<double> noise(0.0, 0.05);
  FrequencyTable freq;
  std::vector<ScoredExample> scored;
  for (int i = 0; i < 40; ++i) {
    Entity d(EntityKind::Drug, "D" + std::to_string(i));
    const std::size_t f = 1 + static_cast<std::size_t>(i) * 3;
    freq[d] = f;
    for (int rep = 0; rep < 2; ++rep)
      for (int label : {0, 1}) {
        ScoredExample s;
        s.id = d.name() + "/" + std::to_string(rep) + "/" + std::to_string(label);
        s.label = label;
        s.score = std::clamp(0.1 + 0.8 * static_cast<double>(i) / 39.0 + noise(rng), 0.0, 1.0);
        s.entity_refs = {d, Entity(EntityKind::Variant, "V" + std::to_string(rep))};
        scored.push_back(s);
      }
  }
  const auto fa = error_vs_frequency(scored, freq, EntityKind::Drug);
  if (!fa.true_examples || !fa.false_examples) return {false, "correlation undefined"};
  const auto& t = *fa.true_examples;
  const auto& f = *fa.false_examples;
  return {t.rho < 0 && f.rho > 0 && t.p_value < 0.01 && f.p_value < 0.01,
          "true rho " + num(t.rho) + " (p " + num(t.p_value) + "), false rho " + num(f.rho) + " (p " + num(f.p_value) + ")"};
}

Verdict knn_direction_check() {
  auto out = scratch("knn");
  RunConfig c;
  c.kb_path = kFixture;
  c.output_dir = out.string();
  for (Stage s : {Stage::Ingest, Stage::GenPairs, Stage::GenQuads, Stage::Balance, Stage::Knn}) run_stage(s, c);
  auto pooled = [&](const std::string& set) {
    std::vector<double> s;
    std::vector<int> y;
    for (PairType t : kAllPairTypes) {
      std::ifstream in(out / "knn" / ("scores_" + std::string(to_string(t)) + "_" + set + ".jsonl"));
      std::string line;
      while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        s.push_back(j.at("score").get<double>());
        y.push_back(j.at("label").get<int>());
      }
    }
    return std::make_pair(auc(s, y), s.size());
  };
  const auto [full, n_full] = pooled("test");
  const auto [bal, n_bal] = pooled("balanced");
  return {full > bal, "test AUC " + num(full) + " (n=" + std::to_string(n_full) + ") vs balanced AUC " + num(bal) +
                          " (n=" + std::to_string(n_bal) + ")"};
}

fs::path write_toy_embeddings(const fs::path& dir) {
  std::mt19937_64 rng(909);
  std::normal_distribution<float> n01;
  const char* kinds[] = {"drug", "gene", "variant"};
  std::vector<EmbeddingRecord> recs;
  for (int i = 0; i < 150; ++i) {
    EmbeddingRecord r{"e" + std::to_string(i), {{"entity_kind", kinds[i % 3]}}, std::vector<float>(8)};
    for (int j = 0; j < 8; ++j) r.vector[static_cast<std::size_t>(j)] = n01(rng) + (j == i % 3 ? 5.f : 0.f);
    recs.push_back(std::move(r));
  }
  EmbeddingFileHeader h;
  h.dimension = 8;
  h.count = recs.size();
  h.model = "toy";
  const auto path = dir / "toy.emb";
  write_embeddings_file(path, h, recs);
  return path;
}

std::map<std::string, std::string> artifact_digests(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).string();
    if (e.path().filename() == "manifest.json") {
      std::ifstream in(e.path());
      auto j = nlohmann::json::parse(in);
      j.erase("created");
      out[rel] = sha256_hex(j.dump());
    } else {
      out[rel] = sha256_file(e.path());
    }
  }
  return out;
}

Verdict determinism_check() {
  auto dir = scratch("determinism");
  RunConfig c;
  c.kb_path = kFixture;
  c.seed = 20;
  c.embeddings = {write_toy_embeddings(dir).string()};
  c.probe_count = 8;
  c.min_cluster_size = 20;
  c.n_clusters = 3;
  c.dimension_linkage = true;
  c.output_dir = (dir / "a").string();
  c.threads = 4;
  run_pipeline(c);
  c.output_dir = (dir / "b").string();
  c.threads = 1;
  run_pipeline(c);
  const auto a = artifact_digests(dir / "a");
  const auto b = artifact_digests(dir / "b");
  std::size_t differing = 0;
  for (const auto& [k, v] : a) differing += !b.count(k) || b.at(k) != v;
  return {a.size() == b.size() && differing == 0 && a.size() > 20,
          std::to_string(a.size()) + " artifacts, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  report("nuclear-norm", nuclear_norm_check);
  report("probe-gradient", gradient_check);
  report("selectivity", selectivity_check);
  report("balancing", balancing_check);
  report("dataset-invariants", dataset_invariants_check);
  report("ward-hac", ward_check);
  report("density-clustering", density_check);
  report("rank-statistics", rank_statistics_check);
  report("bias-direction", bias_direction_check);
  report("knn-control", knn_direction_check);
  report("determinism", determinism_check);
  return failures == 0 ? 0 : 1;
}
