#include "repprobe/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "repprobe/cluster.hpp"
#include "repprobe/embedding_store.hpp"
#include "repprobe/error.hpp"
#include "repprobe/hash.hpp"
#include "repprobe/kb.hpp"
#include "repprobe/knn.hpp"
#include "repprobe/probe.hpp"
#include "repprobe/rng.hpp"
#include "repprobe/stats.hpp"

namespace repprobe {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<std::pair<Stage, std::string_view>, 9> kStageNames{{{Stage::Ingest, "ingest"},
                                                                         {Stage::GenPairs, "gen-pairs"},
                                                                         {Stage::GenQuads, "gen-quads"},
                                                                         {Stage::Balance, "balance"},
                                                                         {Stage::Knn, "knn"},
                                                                         {Stage::Probe, "probe"},
                                                                         {Stage::Cluster, "cluster"},
                                                                         {Stage::Stats, "stats"},
                                                                         {Stage::Report, "report"}}};

constexpr std::array<std::string_view, 2> kTestSets{"test", "balanced"};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string(), false);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string(), false);
    out << content;
    if (!out.flush()) throw Error("write failed for " + tmp.string(), false);
  }
  fs::rename(tmp, p);
}

std::vector<std::map<std::string, std::string>> read_tsv(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> fields;
    std::istringstream ls(line);
    for (std::string f; std::getline(ls, f, '\t');) fields.push_back(f);
    if (header.empty()) {
      header = fields;
      continue;
    }
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < fields.size(); ++i) row[header[i]] = fields[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

KbFormat format_for(const fs::path& p) { return p.extension() == ".tsv" ? KbFormat::Tsv : KbFormat::Json; }

DatasetSplit load_dataset(const fs::path& p) {
  std::istringstream in(read_text(p));
  return read_dataset_jsonl(in);
}

std::string dump_dataset(const DatasetSplit& split) {
  std::ostringstream os;
  write_dataset_jsonl(split, os);
  return os.str();
}

KnowledgeBase load_kb(const fs::path& p) { return parse_kb(read_text(p), format_for(p)).kb; }

// ---------------------------------------------------------------------------
// Stage context

struct Context {
  const RunConfig& config;
  fs::path root;  // output_dir
  fs::path dir;   // output_dir/<stage>
  std::vector<std::string> outputs;

  void emit(const std::string& name, const std::string& content) {
    write_text(dir / name, content);
    outputs.push_back(name);
  }
  fs::path artifact(Stage s, const std::string& name) const { return root / std::string(to_string(s)) / name; }
};

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

void check_unique_stems(const RunConfig& c) {
  std::set<std::string> seen;
  for (const auto& e : c.embeddings)
    if (!seen.insert(stem_of(e)).second) throw ConfigError("two embedding files share the stem '" + stem_of(e) + "'");
}

std::vector<fs::path> embedding_inputs(Stage stage, const RunConfig& c) {
  if (c.embeddings.empty()) throw MissingInput(std::string(to_string(stage)), "no embedding files configured");
  check_unique_stems(c);
  std::vector<fs::path> out(c.embeddings.begin(), c.embeddings.end());
  return out;
}

std::vector<fs::path> score_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.starts_with("scores_") && name.ends_with(".jsonl")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> stage_inputs(Stage stage, const RunConfig& c, const fs::path& root) {
  auto at = [&](Stage s, std::string_view name) { return root / std::string(to_string(s)) / std::string(name); };
  std::vector<fs::path> in;
  switch (stage) {
    case Stage::Ingest:
      if (c.kb_path.empty()) throw MissingInput("ingest", "no knowledge base given (--kb)");
      in.push_back(c.kb_path);
      break;
    case Stage::GenPairs:
    case Stage::GenQuads:
      in.push_back(at(Stage::Ingest, "kb.json"));
      break;
    case Stage::Balance:
      for (auto name : kDatasetNames)
        in.push_back(name == "quad" ? at(Stage::GenQuads, "quad.jsonl") : at(Stage::GenPairs, std::string(name) + ".jsonl"));
      break;
    case Stage::Knn:
      for (auto name : kDatasetNames) in.push_back(at(Stage::Balance, std::string(name) + ".jsonl"));
      break;
    case Stage::Probe:
      in = embedding_inputs(stage, c);
      break;
    case Stage::Cluster:
      in = embedding_inputs(stage, c);
      for (const auto& [stem, path] : c.projections) in.push_back(path);
      break;
    case Stage::Stats: {
      in.push_back(at(Stage::Ingest, "kb.json"));
      for (auto name : kDatasetNames) in.push_back(at(Stage::Balance, std::string(name) + ".jsonl"));
      const auto knn = score_files(root / "knn");
      if (knn.empty()) throw MissingInput("stats", "no KNN scores under " + (root / "knn").string());
      in.insert(in.end(), knn.begin(), knn.end());
      for (const auto& [model, dir] : c.scores) {
        const auto files = score_files(dir);
        if (files.empty()) throw MissingInput("stats", "no score files for model '" + model + "' in " + dir);
        in.insert(in.end(), files.begin(), files.end());
      }
      break;
    }
    case Stage::Report: {
      in.push_back(at(Stage::Balance, "stats.tsv"));
      for (auto opt : {at(Stage::Knn, "auc_by_k.tsv"), at(Stage::Stats, "auc_summary.tsv")})
        if (fs::exists(opt)) in.push_back(opt);
      for (Stage s : {Stage::Probe, Stage::Cluster}) {
        const fs::path d = root / std::string(to_string(s));
        if (!fs::is_directory(d)) continue;
        std::vector<fs::path> found;
        for (const auto& e : fs::recursive_directory_iterator(d)) {
          const auto name = e.path().filename().string();
          if (name == "probe_report.tsv" || name == "homogeneity.tsv" || name == "density_homogeneity.tsv")
            found.push_back(e.path());
        }
        std::sort(found.begin(), found.end());
        in.insert(in.end(), found.begin(), found.end());
      }
      break;
    }
  }
  for (const auto& p : in)
    if (!fs::is_regular_file(p)) throw MissingInput(std::string(to_string(stage)), p.string());
  return in;
}

std::string display_path(const fs::path& p, const fs::path& root) {
  const auto rel = fs::relative(p, root);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// ---------------------------------------------------------------------------
// Stages

void stage_ingest(Context& ctx) {
  const fs::path kb_path = ctx.config.kb_path;
  ParseOptions opts;
  opts.strict = ctx.config.strict_ingest;
  const auto parsed = parse_kb(read_text(kb_path), format_for(kb_path), opts);
  const KnowledgeBase kept = filter_predictive_supports(parsed.kb);
  ctx.emit("kb.json", serialize_kb(kept, KbFormat::Json));

  std::ostringstream rejects;
  rejects << "locator\tfield\treason\n";
  for (const auto& r : parsed.rejects) rejects << r.locator << '\t' << r.field << '\t' << r.reason << '\n';
  ctx.emit("rejects.tsv", rejects.str());

  std::ostringstream summary;
  summary << "parsed\trejected\tkept\n" << parsed.kb.size() << '\t' << parsed.rejects.size() << '\t' << kept.size() << '\n';
  ctx.emit("ingest_summary.tsv", summary.str());
}

void stage_gen_pairs(Context& ctx) {
  const KnowledgeBase kb = load_kb(ctx.artifact(Stage::Ingest, "kb.json"));
  for (PairType type : kAllPairTypes) {
    const std::string name(to_string(type));
    const auto truths = extract_true_pairs(kb, type);
    const auto falses = sample_false_pairs(kb, type, truths.size(), derive_seed(ctx.config.seed, "false-pairs/" + name));
    std::vector<LabeledExample> examples;
    for (const auto& p : truths) examples.push_back(make_example(p, kb));
    for (const auto& p : falses) examples.push_back(make_example(p, kb));
    const auto split = split_train_test(std::move(examples), ctx.config.train_fraction,
                                        derive_seed(ctx.config.seed, "split/" + name));
    ctx.emit(name + ".jsonl", dump_dataset(split));
  }
}

void stage_gen_quads(Context& ctx) {
  const KnowledgeBase kb = load_kb(ctx.artifact(Stage::Ingest, "kb.json"));
  const auto extraction = extract_quadruples(kb);
  std::vector<LabeledExample> examples;
  for (const auto& q : extraction.quadruples) examples.push_back(make_example(q, kb));
  const auto split =
      split_train_test(std::move(examples), ctx.config.train_fraction, derive_seed(ctx.config.seed, "split/quad"));
  ctx.emit("quad.jsonl", dump_dataset(split));
  std::ostringstream summary;
  summary << "quadruples\tnon_uniform_dropped\n"
          << extraction.quadruples.size() << '\t' << extraction.non_uniform_dropped << '\n';
  ctx.emit("quad_summary.tsv", summary.str());
}

void stage_balance(Context& ctx) {
  std::vector<DatasetStats> stats;
  for (auto name_view : kDatasetNames) {
    const std::string name(name_view);
    const fs::path src = name == "quad" ? ctx.artifact(Stage::GenQuads, "quad.jsonl")
                                        : ctx.artifact(Stage::GenPairs, name + ".jsonl");
    const DatasetSplit split = load_dataset(src);
    const auto verdicts = compute_imbalanced_entities(split.train, kPositiveLabel, ctx.config.thresholds);
    const DatasetSplit balanced = balance_test_set(split, verdicts);
    ctx.emit(name + ".jsonl", dump_dataset(balanced));

    std::ostringstream table;
    table << "kind\tentity\tpositive\ttotal\ttrue_fraction\tverdict\n";
    for (const auto& v : verdicts)
      table << to_string(v.entity.kind()) << '\t' << v.entity.name() << '\t' << v.positive << '\t' << v.total << '\t'
            << fmt(v.true_fraction()) << '\t' << to_string(v.verdict) << '\n';
    ctx.emit("imbalance_" + name + ".tsv", table.str());
    stats.push_back(dataset_stats(name, balanced));
  }
  std::ostringstream os;
  write_stats_tsv(stats, os);
  ctx.emit("stats.tsv", os.str());
}

std::optional<double> try_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) return std::nullopt;
  try {
    return auc(scores, labels);
  } catch (const SingleClass&) {
    return std::nullopt;
  }
}

std::vector<int> labels_of(const std::vector<LabeledExample>& xs) {
  std::vector<int> out;
  for (const auto& x : xs) out.push_back(x.label);
  return out;
}

std::string scores_jsonl(const std::vector<LabeledExample>& xs, const std::vector<double>& scores) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i)
    os << json{{"id", xs[i].id}, {"score", scores[i]}, {"label", xs[i].label}}.dump() << '\n';
  return os.str();
}

void stage_knn(Context& ctx) {
  std::ostringstream cv_tsv, by_k;
  cv_tsv << "dataset\tfold\tn\tauc\n";
  by_k << "dataset\tk\ttest_auc\tbalanced_auc\n";
  for (auto name_view : kDatasetNames) {
    const std::string name(name_view);
    const DatasetSplit split = load_dataset(ctx.artifact(Stage::Balance, name + ".jsonl"));
    if (split.train.empty()) continue;
    const int train_n = static_cast<int>(split.train.size());
    const int k = std::min(ctx.config.knn_k, train_n);

    const auto test_scores = knn_scores(split.train, split.test, k);
    const auto bal_scores = knn_scores(split.train, split.balanced_test, k);
    ctx.emit("scores_" + name + "_test.jsonl", scores_jsonl(split.test, test_scores));
    ctx.emit("scores_" + name + "_balanced.jsonl", scores_jsonl(split.balanced_test, bal_scores));

    for (int kk : ctx.config.knn_k_grid) {
      if (kk > train_n) continue;
      by_k << name << '\t' << kk << '\t'
           << fmt(try_auc(knn_scores(split.train, split.test, kk), labels_of(split.test))) << '\t'
           << fmt(try_auc(knn_scores(split.train, split.balanced_test, kk), labels_of(split.balanced_test))) << '\n';
    }

    const int folds = std::min(ctx.config.cv_folds, train_n);
    if (folds < 2) continue;
    const auto cv = cross_validate(split.train, folds, derive_seed(ctx.config.seed, "cv/" + name), ctx.config.knn_k);
    for (std::size_t f = 0; f < cv.fold_sizes.size(); ++f)
      cv_tsv << name << '\t' << f << '\t' << cv.fold_sizes[f] << '\t' << fmt(cv.fold_auc[f]) << '\n';
    cv_tsv << name << "\tmean\t" << train_n << '\t' << fmt(cv.mean_auc) << '\n';
    cv_tsv << name << "\tsd\t" << train_n << '\t' << fmt(cv.sd_auc) << '\n';
    cv_tsv << name << "\tpooled\t" << train_n << '\t' << fmt(cv.pooled_auc) << '\n';
  }
  ctx.emit("cv.tsv", cv_tsv.str());
  ctx.emit("auc_by_k.tsv", by_k.str());
}

void stage_probe(Context& ctx) {
  for (const auto& path : ctx.config.embeddings) {
    const auto file = read_embeddings_file(path);
    SweepOptions opts;
    opts.n_probes = ctx.config.probe_count;
    opts.seed = derive_seed(ctx.config.seed, "probe/" + stem_of(path));
    opts.tag_key = ctx.config.probe_tag;
    opts.lambda_range = ctx.config.lambda_range;
    opts.dropout_range = ctx.config.dropout_range;
    opts.epochs = ctx.config.probe_epochs;
    opts.threads = ctx.config.threads;
    const auto report = run_probe_sweep(file.records, opts);
    std::ostringstream os;
    write_probe_report_tsv(report, os);
    ctx.emit(stem_of(path) + "/probe_report.tsv", os.str());
  }
}

void stage_cluster(Context& ctx) {
  for (const auto& path : ctx.config.embeddings) {
    const std::string stem = stem_of(path);
    const auto file = read_embeddings_file(path);
    std::vector<std::string> ids, labels;
    for (const auto& r : file.records) {
      ids.push_back(r.id);
      const auto tag = r.tag(ctx.config.probe_tag);
      if (!tag) throw InvalidArgument("record '" + r.id + "' lacks tag '" + ctx.config.probe_tag + "'");
      labels.push_back(*tag);
    }
    const Eigen::MatrixXd x = to_matrix<double>(file.records);

    const Linkage linkage = hac_ward(x);
    std::ostringstream os;
    write_linkage_tsv(linkage, os);
    ctx.emit(stem + "/linkage.tsv", os.str());

    const int k = std::min<int>(ctx.config.n_clusters, static_cast<int>(ids.size()));
    const ClusterAssignment ward = cut_dendrogram(linkage, {.threshold = std::nullopt, .n_clusters = k});
    os.str("");
    write_clusters_tsv(ids, ward, labels, os);
    ctx.emit(stem + "/clusters.tsv", os.str());
    os.str("");
    write_homogeneity_tsv(homogeneity(ward, labels), os);
    ctx.emit(stem + "/homogeneity.tsv", os.str());

    std::vector<ProjectedPoint> points;
    if (auto it = ctx.config.projections.find(stem); it != ctx.config.projections.end()) {
      std::istringstream in(read_text(it->second));
      points = load_external_projection(in, std::set<std::string>(ids.begin(), ids.end()));
    } else {
      points = pca_project2d(ids, x).points;
    }
    std::map<std::string, std::string> label_of;
    for (std::size_t i = 0; i < ids.size(); ++i) label_of[ids[i]] = labels[i];
    std::vector<std::string> p_ids, p_labels;
    os.str("");
    os << "id\tx\ty\n" << std::setprecision(10);
    for (const auto& p : points) {
      p_ids.push_back(p.id);
      p_labels.push_back(label_of.at(p.id));
      os << p.id << '\t' << p.x << '\t' << p.y << '\n';
    }
    ctx.emit(stem + "/projection.tsv", os.str());

    const ClusterAssignment density = density_cluster(projection_matrix(points), ctx.config.min_cluster_size);
    os.str("");
    write_clusters_tsv(p_ids, density, p_labels, os);
    ctx.emit(stem + "/density_clusters.tsv", os.str());
    os.str("");
    write_homogeneity_tsv(homogeneity(density, p_labels), os);
    ctx.emit(stem + "/density_homogeneity.tsv", os.str());

    if (ctx.config.dimension_linkage) {
      os.str("");
      write_linkage_tsv(hac_ward(x.transpose()), os);
      ctx.emit(stem + "/dimension_linkage.tsv", os.str());
    }
  }
}

std::map<std::string, double> read_scores(const fs::path& p) {
  std::map<std::string, double> out;
  std::istringstream in(read_text(p));
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const double s = j.at("score").get<double>();
      if (!std::isfinite(s) || s < 0 || s > 1) throw FormatError(line_no, "score outside [0, 1]");
      if (!out.emplace(j.at("id").get<std::string>(), s).second) throw FormatError(line_no, "duplicate id");
    } catch (const json::exception& e) {
      throw FormatError(line_no, p.filename().string() + ": " + e.what());
    }
  }
  return out;
}

struct ScoreSet {
  std::string model, dataset, test_set;
  std::vector<ScoredExample> scored;
};

void stage_stats(Context& ctx) {
  const KnowledgeBase kb = load_kb(ctx.artifact(Stage::Ingest, "kb.json"));
  std::map<std::string, fs::path> model_dirs{{"knn", ctx.root / "knn"}};
  for (const auto& [model, dir] : ctx.config.scores) {
    if (model == "knn") throw ConfigError("model name 'knn' is reserved for the baseline");
    model_dirs[model] = dir;
  }

  std::map<std::string, DatasetSplit> datasets;
  for (auto name : kDatasetNames)
    datasets.emplace(std::string(name), load_dataset(ctx.artifact(Stage::Balance, std::string(name) + ".jsonl")));

  std::vector<ScoreSet> sets;
  for (const auto& [model, dir] : model_dirs) {
    for (const auto& [name, split] : datasets) {
      for (auto test_set : kTestSets) {
        const fs::path p = dir / ("scores_" + name + "_" + std::string(test_set) + ".jsonl");
        if (!fs::exists(p)) continue;
        const auto scores = read_scores(p);
        const auto& examples = test_set == "test" ? split.test : split.balanced_test;
        std::set<std::string> known;
        ScoreSet s{model, name, std::string(test_set), {}};
        for (const auto& ex : examples) {
          known.insert(ex.id);
          if (auto it = scores.find(ex.id); it != scores.end()) s.scored.push_back(make_scored(ex, it->second));
        }
        for (const auto& [id, _] : scores)
          if (!known.contains(id)) throw UnknownId(id);
        sets.push_back(std::move(s));
      }
    }
  }

  std::ostringstream summary;
  summary << "model\tdataset\ttest_set\tn\tauc\tbrier\n";
  for (const auto& s : sets) {
    std::optional<double> a, b;
    if (!s.scored.empty()) {
      b = brier(s.scored);
      try {
        a = auc(s.scored);
      } catch (const SingleClass&) {
      }
    }
    summary << s.model << '\t' << s.dataset << '\t' << s.test_set << '\t' << s.scored.size() << '\t' << fmt(a) << '\t'
            << fmt(b) << '\n';
  }
  ctx.emit("auc_summary.tsv", summary.str());

  const FrequencyTable evidence = evidence_item_counts(kb);
  std::ostringstream points, corr;
  points << "model\tdataset\tkind\tfrequency_key\tid\tentity\tfrequency\tlabel\terror\n";
  corr << "model\tdataset\tkind\tfrequency_key\tclass\tn\trho\tp_value\n";
  for (const auto& s : sets) {
    if (s.test_set != "test") continue;
    const auto& split = datasets.at(s.dataset);
    const FrequencyTable true_pairs = true_pair_counts(split.train);
    std::vector<EntityKind> kinds;
    if (s.dataset == "quad") {
      kinds = {EntityKind::Variant, EntityKind::Gene, EntityKind::Disease, EntityKind::Drug};
    } else {
      const auto [a, b] = kinds_of(*parse_pair_type(s.dataset));
      kinds = {a, b};
    }
    for (EntityKind kind : kinds) {
      for (FrequencyKey key : {FrequencyKey::TruePairCountInTrain, FrequencyKey::EvidenceItemCount}) {
        const auto fa = error_vs_frequency(s.scored, key == FrequencyKey::EvidenceItemCount ? evidence : true_pairs, kind);
        const std::string prefix =
            s.model + '\t' + s.dataset + '\t' + std::string(to_string(kind)) + '\t' + std::string(to_string(key)) + '\t';
        for (const auto& p : fa.points)
          points << prefix << p.id << '\t' << p.entity << '\t' << p.frequency << '\t' << p.label << '\t' << fmt(p.error)
                 << '\n';
        for (const auto& [cls, r] : {std::pair{"true", fa.true_examples}, std::pair{"false", fa.false_examples}}) {
          if (r) corr << prefix << cls << '\t' << r->n << '\t' << fmt(r->rho) << '\t' << fmt(r->p_value) << '\n';
          else corr << prefix << cls << "\t-\tNA\tNA\n";
        }
      }
    }
  }
  ctx.emit("error_frequency.tsv", points.str());
  ctx.emit("frequency_correlation.tsv", corr.str());

  std::ostringstream strata, tests;
  strata << "model\tdataset\ttest_set\tby\tkey\tn\tauc\tbrier\n";
  tests << "model_a\tmodel_b\tlevel\tn_a\tn_b\tu\tp_value\n";
  std::map<std::string, const ScoreSet*> quad_balanced;
  for (const auto& s : sets) {
    if (s.dataset != "quad" || s.test_set != "balanced") continue;
    quad_balanced[s.model] = &s;
    for (auto [by, by_name] : {std::pair{StratifyBy::Level, "level"}, std::pair{StratifyBy::Rating, "rating"}})
      for (const auto& st : stratify_by_evidence(s.scored, by))
        strata << s.model << '\t' << s.dataset << '\t' << s.test_set << '\t' << by_name << '\t' << st.key << '\t' << st.n
               << '\t' << fmt(st.auc) << '\t' << fmt(st.brier) << '\n';
  }
  if (auto base = quad_balanced.find("knn"); base != quad_balanced.end()) {
    for (const auto& [model, s] : quad_balanced) {
      if (model == "knn") continue;
      for (EvidenceLevel level : {EvidenceLevel::A, EvidenceLevel::B, EvidenceLevel::C, EvidenceLevel::D,
                                  EvidenceLevel::E}) {
        std::vector<double> ea, eb;
        for (const auto& x : base->second->scored)
          if (x.level == level) ea.push_back(x.error());
        for (const auto& x : s->scored)
          if (x.level == level) eb.push_back(x.error());
        if (ea.empty() || eb.empty()) continue;
        const auto mw = mann_whitney_u(ea, eb);
        tests << "knn\t" << model << '\t' << to_string(level) << '\t' << ea.size() << '\t' << eb.size() << '\t'
              << fmt(mw.u) << '\t' << fmt(mw.p_value) << '\n';
      }
    }
  }
  ctx.emit("strata.tsv", strata.str());
  ctx.emit("strata_tests.tsv", tests.str());

  std::map<std::string, std::vector<ScoredExample>> by_model;
  for (const auto& s : sets)
    if (s.dataset == "quad" && s.test_set == "test") by_model[s.model] = s.scored;
  const auto audit = audit_well_known(by_model);
  std::ostringstream os;
  os << "id\tentities\tlabel\tlevel\trating";
  for (const auto& [model, _] : by_model) os << "\terror_" << model;
  os << "\tmax_error\n";
  for (const auto& row : audit) {
    std::string entities;
    for (const auto& e : row.entities) entities += (entities.empty() ? "" : "|") + e.name();
    os << row.id << '\t' << entities << '\t' << row.label << '\t' << to_string(row.level) << '\t' << row.rating;
    for (const auto& [model, _] : by_model) {
      auto it = row.error.find(model);
      os << '\t' << (it == row.error.end() ? std::string("NA") : fmt(it->second));
    }
    os << '\t' << fmt(row.max_error) << '\n';
  }
  ctx.emit("well_known_audit.tsv", os.str());
}

void stage_report(Context& ctx) {
  std::ostringstream os;
  os << "section\tname\tmetric\tvalue\n";
  for (const auto& row : read_tsv(ctx.artifact(Stage::Balance, "stats.tsv")))
    for (const auto& [col, value] : row)
      if (col != "dataset") os << "dataset\t" << row.at("dataset") << '\t' << col << '\t' << value << '\n';

  if (const auto p = ctx.artifact(Stage::Stats, "auc_summary.tsv"); fs::exists(p)) {
    for (const auto& row : read_tsv(p)) {
      const std::string name = row.at("model") + "/" + row.at("dataset") + "/" + row.at("test_set");
      os << "auc\t" << name << "\tauc\t" << row.at("auc") << '\n';
      os << "auc\t" << name << "\tbrier\t" << row.at("brier") << '\n';
    }
  } else if (const auto q = ctx.artifact(Stage::Knn, "auc_by_k.tsv"); fs::exists(q)) {
    for (const auto& row : read_tsv(q)) {
      const std::string name = "knn/" + row.at("dataset") + "/k=" + row.at("k");
      os << "auc\t" << name << "\ttest_auc\t" << row.at("test_auc") << '\n';
      os << "auc\t" << name << "\tbalanced_auc\t" << row.at("balanced_auc") << '\n';
    }
  }

  for (const auto& path : ctx.config.embeddings) {
    const std::string stem = stem_of(path);
    if (const auto p = ctx.root / "probe" / stem / "probe_report.tsv"; fs::exists(p)) {
      double sum = 0, best = 0;
      std::size_t n = 0;
      for (const auto& row : read_tsv(p)) {
        if (row.at("is_control") != "0") continue;
        sum += std::stod(row.at("selectivity"));
        best = std::max(best, std::stod(row.at("test_acc")));
        ++n;
      }
      if (n) {
        os << "probe\t" << stem << "\tmean_selectivity\t" << fmt(sum / static_cast<double>(n)) << '\n';
        os << "probe\t" << stem << "\tmax_test_acc\t" << fmt(best) << '\n';
      }
    }
    for (std::string file : {"homogeneity.tsv", "density_homogeneity.tsv"}) {
      const auto p = ctx.root / "cluster" / stem / file;
      if (!fs::exists(p)) continue;
      const std::string method = file == "homogeneity.tsv" ? "ward" : "density";
      std::size_t clusters = 0;
      std::string mean = "NA";
      for (const auto& row : read_tsv(p)) {
        if (row.at("cluster") == "mean") mean = row.at("homogeneity");
        else ++clusters;
      }
      os << "cluster\t" << stem << '\t' << method << "_clusters\t" << clusters << '\n';
      os << "cluster\t" << stem << '\t' << method << "_mean_homogeneity\t" << mean << '\n';
    }
  }
  ctx.emit("summary.tsv", os.str());
}

}  // namespace

std::string_view to_string(Stage s) {
  for (const auto& [stage, name] : kStageNames)
    if (stage == s) return name;
  return "?";
}

std::optional<Stage> parse_stage(std::string_view text) {
  for (const auto& [stage, name] : kStageNames)
    if (name == text) return stage;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Config

namespace {

json to_json_doc(const RunConfig& c, bool for_hash) {
  json j{{"kb_path", c.kb_path},
         {"seed", c.seed},
         {"strict_ingest", c.strict_ingest},
         {"train_fraction", c.train_fraction},
         {"knn_k", c.knn_k},
         {"knn_k_grid", c.knn_k_grid},
         {"cv_folds", c.cv_folds},
         {"probe_count", c.probe_count},
         {"probe_epochs", c.probe_epochs},
         {"lambda_range", {c.lambda_range.first, c.lambda_range.second}},
         {"dropout_range", {c.dropout_range.first, c.dropout_range.second}},
         {"probe_tag", c.probe_tag},
         {"min_cluster_size", c.min_cluster_size},
         {"n_clusters", c.n_clusters},
         {"dimension_linkage", c.dimension_linkage},
         {"thresholds", {{"true_imb", c.thresholds.true_imbalanced}, {"false_imb", c.thresholds.false_imbalanced}}},
         {"embeddings", c.embeddings},
         {"projections", c.projections},
         {"scores", c.scores}};
  if (!for_hash) {
    j["output_dir"] = c.output_dir;
    j["threads"] = c.threads;
  }
  return j;
}

template <typename T>
T get_as(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + key + "' has the wrong type");
  }
}

std::pair<double, double> get_range(const json& j, const std::string& key) {
  const auto v = get_as<std::vector<double>>(j, key);
  if (v.size() != 2) throw ConfigError("field '" + key + "' must be a [low, high] pair");
  return {v[0], v[1]};
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return to_json_doc(config, false).dump(2) + "\n"; }

RunConfig config_from_json(std::string_view text, RunConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("top level must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "kb_path") c.kb_path = get_as<std::string>(v, key);
    else if (key == "output_dir") c.output_dir = get_as<std::string>(v, key);
    else if (key == "seed") {
      if (!v.is_number_unsigned()) throw ConfigError("field 'seed' must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "strict_ingest") c.strict_ingest = get_as<bool>(v, key);
    else if (key == "train_fraction") c.train_fraction = get_as<double>(v, key);
    else if (key == "knn_k") c.knn_k = get_as<int>(v, key);
    else if (key == "knn_k_grid") c.knn_k_grid = get_as<std::vector<int>>(v, key);
    else if (key == "cv_folds") c.cv_folds = get_as<int>(v, key);
    else if (key == "probe_count") c.probe_count = get_as<int>(v, key);
    else if (key == "probe_epochs") c.probe_epochs = get_as<int>(v, key);
    else if (key == "lambda_range") c.lambda_range = get_range(v, key);
    else if (key == "dropout_range") c.dropout_range = get_range(v, key);
    else if (key == "probe_tag") c.probe_tag = get_as<std::string>(v, key);
    else if (key == "min_cluster_size") c.min_cluster_size = get_as<int>(v, key);
    else if (key == "n_clusters") c.n_clusters = get_as<int>(v, key);
    else if (key == "dimension_linkage") c.dimension_linkage = get_as<bool>(v, key);
    else if (key == "thresholds") {
      if (!v.is_object()) throw ConfigError("field 'thresholds' must be an object");
      for (const auto& [tk, tv] : v.items()) {
        if (tk == "true_imb") c.thresholds.true_imbalanced = get_as<double>(tv, "thresholds.true_imb");
        else if (tk == "false_imb") c.thresholds.false_imbalanced = get_as<double>(tv, "thresholds.false_imb");
        else throw ConfigError("unknown field 'thresholds." + tk + "'");
      }
    } else if (key == "embeddings") c.embeddings = get_as<std::vector<std::string>>(v, key);
    else if (key == "projections") c.projections = get_as<std::map<std::string, std::string>>(v, key);
    else if (key == "scores") c.scores = get_as<std::map<std::string, std::string>>(v, key);
    else if (key == "threads") c.threads = get_as<unsigned>(v, key);
    else throw ConfigError("unknown field '" + key + "'");
  }
  return c;
}

RunConfig load_config(const fs::path& path, RunConfig base) {
  if (path.extension() != ".json") throw ConfigError("only JSON config files are supported: " + path.string());
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  return config_from_json(read_text(path), std::move(base));
}

void validate_config(const RunConfig& c) {
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (c.knn_k < 1) throw ConfigError("knn_k must be >= 1");
  for (int k : c.knn_k_grid)
    if (k < 1) throw ConfigError("knn_k_grid entries must be >= 1");
  if (c.cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
  if (c.probe_count < 1) throw ConfigError("probe_count must be >= 1");
  if (c.probe_epochs < 1) throw ConfigError("probe_epochs must be >= 1");
  if (!(c.lambda_range.first > 0 && c.lambda_range.second >= c.lambda_range.first))
    throw ConfigError("lambda_range must be positive and ordered");
  if (!(c.dropout_range.first >= 0 && c.dropout_range.second < 1 && c.dropout_range.second >= c.dropout_range.first))
    throw ConfigError("dropout_range must lie in [0, 1) and be ordered");
  if (c.min_cluster_size < 2) throw ConfigError("min_cluster_size must be >= 2");
  if (c.n_clusters < 1) throw ConfigError("n_clusters must be >= 1");
  if (!(c.thresholds.false_imbalanced >= 0 && c.thresholds.true_imbalanced <= 1 &&
        c.thresholds.false_imbalanced <= c.thresholds.true_imbalanced))
    throw ConfigError("thresholds must satisfy 0 <= false_imb <= true_imb <= 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir is empty");
  check_unique_stems(c);
}

std::string config_hash(const RunConfig& config) { return sha256_hex(to_json_doc(config, true).dump()); }

// ---------------------------------------------------------------------------
// Running

StageResult run_stage(Stage stage, const RunConfig& config) {
  validate_config(config);
  const fs::path root = config.output_dir;
  const fs::path dir = root / std::string(to_string(stage));
  const auto inputs = stage_inputs(stage, config, root);

  json input_hashes = json::array();
  for (const auto& p : inputs) input_hashes.push_back({{"path", display_path(p, root)}, {"sha256", sha256_file(p)}});
  const std::string chash = config_hash(config);

  StageResult result;
  result.stage = stage;
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::is_regular_file(manifest_path)) {
    try {
      const json m = json::parse(read_text(manifest_path));
      bool same = m.at("config_sha256") == chash && m.at("inputs") == input_hashes;
      for (const auto& o : m.at("outputs")) {
        const fs::path p = dir / o.at("path").get<std::string>();
        same = same && fs::is_regular_file(p) && sha256_file(p) == o.at("sha256").get<std::string>();
        result.outputs.push_back(o.at("path").get<std::string>());
      }
      if (same) {
        result.up_to_date = true;
        return result;
      }
    } catch (const json::exception&) {
    }
    result.outputs.clear();
  }

  fs::remove_all(dir);
  fs::create_directories(dir);
  Context ctx{config, root, dir, {}};
  switch (stage) {
    case Stage::Ingest: stage_ingest(ctx); break;
    case Stage::GenPairs: stage_gen_pairs(ctx); break;
    case Stage::GenQuads: stage_gen_quads(ctx); break;
    case Stage::Balance: stage_balance(ctx); break;
    case Stage::Knn: stage_knn(ctx); break;
    case Stage::Probe: stage_probe(ctx); break;
    case Stage::Cluster: stage_cluster(ctx); break;
    case Stage::Stats: stage_stats(ctx); break;
    case Stage::Report: stage_report(ctx); break;
  }

  json outputs = json::array();
  for (const auto& name : ctx.outputs) outputs.push_back({{"path", name}, {"sha256", sha256_file(dir / name)}});
  const json manifest{{"stage", to_string(stage)},
                      {"config_sha256", chash},
                      {"inputs", input_hashes},
                      {"outputs", outputs},
                      {"created", utc_now()}};
  write_text(manifest_path, manifest.dump(2) + "\n");
  result.outputs = std::move(ctx.outputs);
  return result;
}

std::vector<StageResult> run_pipeline(const RunConfig& config) {
  std::vector<StageResult> results;
  for (Stage s : kAllStages) {
    if ((s == Stage::Probe || s == Stage::Cluster) && config.embeddings.empty()) continue;
    results.push_back(run_stage(s, config));
  }
  return results;
}

}  // namespace repprobe
