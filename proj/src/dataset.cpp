#include "repprobe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "repprobe/error.hpp"
#include "repprobe/rng.hpp"

namespace repprobe {

namespace {

using nlohmann::json;

EvidenceLevel strongest(EvidenceLevel a, EvidenceLevel b) { return std::min(a, b); }

void fill_provenance(LabeledExample& ex, const KnowledgeBase& kb) {
  for (const auto& id : ex.evidence_ids) {
    if (const EvidenceItem* item = kb.find(id)) {
      ex.level = strongest(ex.level, item->level);
      ex.rating = std::max(ex.rating, item->rating);
    }
  }
}

std::vector<std::string> intersect_in_order(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::set<std::string_view> in_b(b.begin(), b.end());
  std::vector<std::string> out;
  for (const auto& id : a)
    if (in_b.contains(id)) out.push_back(id);
  return out;
}

std::string join_drugs(const std::vector<Entity>& drugs, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < drugs.size(); ++i) {
    if (i) out += sep;
    out += drugs[i].name();
  }
  return out;
}

std::string example_id(const EntityPair& p) {
  return std::string(to_string(p.type)) + ":" + p.a.name() + "|" + p.b.name();
}

std::string example_id(const Quadruple& q) {
  const auto key = q.key();
  std::string id = "quad:" + key[0] + "|" + key[1] + "|" + key[2] + "|";
  for (std::size_t i = 3; i < key.size(); ++i) id += (i > 3 ? "+" : "") + key[i];
  return id;
}

json entity_json(const Entity& e) { return {{"kind", to_string(e.kind())}, {"name", e.name()}}; }

Entity entity_from_json(const json& j, std::size_t line) {
  if (!j.is_object() || !j.contains("kind") || !j.contains("name"))
    throw FormatError(line, "entity needs kind and name");
  auto kind = parse_entity_kind(j.at("kind").get<std::string>());
  if (!kind) throw FormatError(line, "unknown entity kind");
  return Entity(*kind, j.at("name").get<std::string>());
}

json example_json(const LabeledExample& ex, std::string_view split, bool balanced) {
  json entities = json::array();
  for (const auto& e : ex.entities()) entities.push_back(entity_json(e));
  const std::string pair_type =
      ex.is_quadruple() ? std::string("quad") : std::string(to_string(std::get<EntityPair>(ex.source).type));
  return {{"id", ex.id},
          {"text", ex.text},
          {"label", ex.label},
          {"pair_type", pair_type},
          {"entities", std::move(entities)},
          {"split", split},
          {"balanced", balanced},
          {"evidence_ids", ex.evidence_ids},
          {"level", to_string(ex.level)},
          {"rating", ex.rating}};
}

Imbalance lookup(const VerdictTable& table, const Entity& e) {
  auto it = table.find(e);
  return it == table.end() ? Imbalance::Neutral : it->second;
}

}  // namespace

std::string_view to_string(PairType t) {
  switch (t) {
    case PairType::DrugVariant: return "drug_variant";
    case PairType::DrugGene: return "drug_gene";
    case PairType::VariantGene: return "variant_gene";
  }
  return "?";
}

std::optional<PairType> parse_pair_type(std::string_view text) {
  for (auto t : kAllPairTypes)
    if (to_string(t) == text) return t;
  return std::nullopt;
}

std::pair<EntityKind, EntityKind> kinds_of(PairType t) {
  switch (t) {
    case PairType::DrugVariant: return {EntityKind::Drug, EntityKind::Variant};
    case PairType::DrugGene: return {EntityKind::Drug, EntityKind::Gene};
    case PairType::VariantGene: return {EntityKind::Variant, EntityKind::Gene};
  }
  return {EntityKind::Drug, EntityKind::Gene};
}

std::vector<std::string> Quadruple::key() const {
  std::vector<std::string> key{variant.name(), gene.name(), disease.name()};
  std::vector<std::string> names;
  for (const auto& d : drugs) names.push_back(d.name());
  std::sort(names.begin(), names.end());
  key.insert(key.end(), names.begin(), names.end());
  return key;
}

int label_of(Significance s) {
  if (s == Significance::Excluded) throw InvalidArgument("excluded significance has no class id");
  return s == Significance::SensitivityResponse ? 1 : 0;
}

std::vector<Entity> LabeledExample::entities() const {
  if (const auto* p = std::get_if<EntityPair>(&source)) return {p->a, p->b};
  const auto& q = std::get<Quadruple>(source);
  std::vector<Entity> out{q.variant, q.gene, q.disease};
  out.insert(out.end(), q.drugs.begin(), q.drugs.end());
  return out;
}

std::vector<EntityPair> extract_true_pairs(const KnowledgeBase& kb, PairType type) {
  std::vector<EntityPair> out;
  std::set<std::pair<Entity, Entity>> seen;
  auto add = [&](const Entity& a, const Entity& b) {
    if (seen.emplace(a, b).second) out.push_back(EntityPair{a, b, type, true});
  };
  for (const auto& item : kb.items()) {
    switch (type) {
      case PairType::DrugVariant:
        for (const auto& d : item.drugs) add(d, item.variant);
        break;
      case PairType::DrugGene:
        for (const auto& d : item.drugs) add(d, item.gene);
        break;
      case PairType::VariantGene:
        add(item.variant, item.gene);
        break;
    }
  }
  return out;
}

std::vector<EntityPair> sample_false_pairs(const KnowledgeBase& kb, PairType type, std::size_t count,
                                           std::uint64_t seed) {
  if (count == 0) return {};
  const auto truth = extract_true_pairs(kb, type);
  std::set<Entity> as, bs;
  std::set<std::pair<Entity, Entity>> attested;
  for (const auto& p : truth) {
    as.insert(p.a);
    bs.insert(p.b);
    attested.emplace(p.a, p.b);
  }
  const std::vector<Entity> left(as.begin(), as.end());
  const std::vector<Entity> right(bs.begin(), bs.end());

  std::vector<std::pair<std::uint32_t, std::uint32_t>> pool;
  for (std::uint32_t i = 0; i < left.size(); ++i)
    for (std::uint32_t j = 0; j < right.size(); ++j)
      if (!attested.contains({left[i], right[j]})) pool.emplace_back(i, j);
  if (pool.size() < count)
    throw ExhaustedSpace("requested " + std::to_string(count) + " false " + std::string(to_string(type)) +
                         " pairs but only " + std::to_string(pool.size()) + " unattested combinations exist");

  // Partial Fisher-Yates: the first `count` slots are a uniform draw without replacement.
  Rng rng(seed);
  std::vector<EntityPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    out.push_back(EntityPair{left[pool[i].first], right[pool[i].second], type, false});
  }
  return out;
}

QuadrupleExtraction extract_quadruples(const KnowledgeBase& kb) {
  std::map<std::vector<std::string>, std::size_t> slot;
  std::vector<Quadruple> groups;
  std::vector<bool> uniform;
  for (const auto& item : kb.items()) {
    if (item.significance.normalized == Significance::Excluded) continue;
    Quadruple q{item.variant, item.gene, item.disease, item.drugs, item.significance.normalized, {item.id}};
    auto [it, inserted] = slot.emplace(q.key(), groups.size());
    if (inserted) {
      groups.push_back(std::move(q));
      uniform.push_back(true);
    } else {
      auto& g = groups[it->second];
      g.evidence_ids.push_back(item.id);
      if (g.label != item.significance.normalized) uniform[it->second] = false;
    }
  }
  QuadrupleExtraction out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (uniform[i]) out.quadruples.push_back(std::move(groups[i]));
    else ++out.non_uniform_dropped;
  }
  return out;
}

std::string render_sequence(const EntityPair& pair) {
  return "[CLS] " + pair.a.name() + " is associated with " + pair.b.name() + " [SEP]";
}

std::string render_sequence(const Quadruple& quad) {
  return "[CLS] " + quad.variant.name() + " of " + quad.gene.name() + " identified in " + quad.disease.name() +
         " is associated with " + join_drugs(quad.drugs, " and ") + " [SEP]";
}

std::vector<std::string> attesting_evidence(const KnowledgeBase& kb, const EntityPair& pair) {
  return intersect_in_order(kb.items_mentioning(pair.a), kb.items_mentioning(pair.b));
}

LabeledExample make_example(const EntityPair& pair, const KnowledgeBase& kb) {
  LabeledExample ex{example_id(pair), render_sequence(pair), pair.label ? 1 : 0, pair, {}, EvidenceLevel::Unknown, 0};
  ex.evidence_ids = attesting_evidence(kb, pair);
  fill_provenance(ex, kb);
  return ex;
}

LabeledExample make_example(const Quadruple& quad, const KnowledgeBase& kb) {
  LabeledExample ex{example_id(quad), render_sequence(quad), label_of(quad.label), quad, quad.evidence_ids,
                    EvidenceLevel::Unknown, 0};
  fill_provenance(ex, kb);
  return ex;
}

DatasetSplit split_train_test(std::vector<LabeledExample> examples, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InvalidArgument("train_fraction must lie strictly between 0 and 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(examples.size()) * train_fraction));
  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < n_train ? split.train : split.test).push_back(std::move(examples[order[i]]));
  return split;
}

std::string_view to_string(Imbalance v) {
  switch (v) {
    case Imbalance::TrueImbalanced: return "true_imbalanced";
    case Imbalance::FalseImbalanced: return "false_imbalanced";
    case Imbalance::Neutral: return "neutral";
  }
  return "neutral";
}

ImbalanceVerdict classify_entity(Entity entity, std::size_t positive, std::size_t total,
                                 const ImbalanceThresholds& thresholds) {
  ImbalanceVerdict v{std::move(entity), positive, total, Imbalance::Neutral};
  if (auto f = v.true_fraction()) {
    if (*f > thresholds.true_imbalanced) v.verdict = Imbalance::TrueImbalanced;
    else if (*f < thresholds.false_imbalanced) v.verdict = Imbalance::FalseImbalanced;
  }
  return v;
}

std::vector<ImbalanceVerdict> compute_imbalanced_entities(const std::vector<LabeledExample>& train,
                                                          int positive_class,
                                                          const ImbalanceThresholds& thresholds) {
  std::map<Entity, std::pair<std::size_t, std::size_t>> counts;  // (positive, total)
  for (const auto& ex : train) {
    auto entities = ex.entities();
    std::sort(entities.begin(), entities.end());
    entities.erase(std::unique(entities.begin(), entities.end()), entities.end());
    for (const auto& e : entities) {
      auto& c = counts[e];
      c.second += 1;
      if (ex.label == positive_class) c.first += 1;
    }
  }
  std::vector<ImbalanceVerdict> out;
  out.reserve(counts.size());
  for (const auto& [e, c] : counts) out.push_back(classify_entity(e, c.first, c.second, thresholds));
  return out;
}

VerdictTable make_verdict_table(const std::vector<ImbalanceVerdict>& verdicts) {
  VerdictTable table;
  for (const auto& v : verdicts) table.insert_or_assign(v.entity, v.verdict);
  return table;
}

bool is_imbalanced(const LabeledExample& example, const VerdictTable& verdicts) {
  const auto entities = example.entities();
  std::vector<Imbalance> v;
  v.reserve(entities.size());
  for (const auto& e : entities) v.push_back(lookup(verdicts, e));

  if (!example.is_quadruple()) {
    const Imbalance a = v[0], b = v[1];
    auto one_sided = [](Imbalance self, Imbalance other) {
      return (self == Imbalance::TrueImbalanced && other != Imbalance::FalseImbalanced) ||
             (self == Imbalance::FalseImbalanced && other != Imbalance::TrueImbalanced);
    };
    return one_sided(a, b) || one_sided(b, a);
  }

  auto no_other_is = [&](std::size_t self, Imbalance what) {
    for (std::size_t j = 0; j < v.size(); ++j)
      if (j != self && v[j] == what) return false;
    return true;
  };
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == Imbalance::TrueImbalanced && no_other_is(i, Imbalance::FalseImbalanced)) return true;
    if (v[i] == Imbalance::FalseImbalanced && no_other_is(i, Imbalance::TrueImbalanced)) return true;
  }
  return false;
}

DatasetSplit balance_test_set(const DatasetSplit& split, const std::vector<ImbalanceVerdict>& verdicts) {
  const auto table = make_verdict_table(verdicts);
  DatasetSplit out = split;
  out.balanced_test.clear();
  for (const auto& ex : split.test)
    if (!is_imbalanced(ex, table)) out.balanced_test.push_back(ex);
  return out;
}

void write_dataset_jsonl(const DatasetSplit& split, std::ostream& sink) {
  std::set<std::string_view> balanced;
  for (const auto& ex : split.balanced_test) balanced.insert(ex.id);
  for (const auto& ex : split.train) sink << example_json(ex, "train", false).dump() << '\n';
  for (const auto& ex : split.test) sink << example_json(ex, "test", balanced.contains(ex.id)).dump() << '\n';
}

DatasetSplit read_dataset_jsonl(std::istream& source) {
  DatasetSplit split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_no, e.what());
    }
    try {
      std::vector<Entity> entities;
      for (const auto& e : j.at("entities")) entities.push_back(entity_from_json(e, line_no));
      const std::string kind = j.at("pair_type").get<std::string>();
      const int label = j.at("label").get<int>();
      std::optional<LabeledExample::Source> src;
      if (kind == "quad") {
        if (entities.size() < 4) throw FormatError(line_no, "quadruple needs at least 4 entities");
        std::vector<Entity> drugs(entities.begin() + 3, entities.end());
        src = Quadruple{entities[0], entities[1], entities[2], std::move(drugs),
                        label == 1 ? Significance::SensitivityResponse : Significance::Resistance,
                        j.at("evidence_ids").get<std::vector<std::string>>()};
      } else {
        auto type = parse_pair_type(kind);
        if (!type) throw FormatError(line_no, "unknown pair_type '" + kind + "'");
        if (entities.size() != 2) throw FormatError(line_no, "pair needs exactly 2 entities");
        const auto [ka, kb] = kinds_of(*type);
        if (entities[0].kind() != ka || entities[1].kind() != kb)
          throw FormatError(line_no, "entity kinds do not match pair_type");
        src = EntityPair{entities[0], entities[1], *type, label == 1};
      }
      LabeledExample ex{j.at("id").get<std::string>(), j.at("text").get<std::string>(), label, *src,
                        j.at("evidence_ids").get<std::vector<std::string>>(),
                        parse_level(j.at("level").get<std::string>()).value_or(EvidenceLevel::Unknown),
                        j.at("rating").get<int>()};
      const std::string rendered = std::visit([](const auto& s) { return render_sequence(s); }, ex.source);
      if (rendered != ex.text) throw FormatError(line_no, "text does not match its template");

      const std::string which = j.at("split").get<std::string>();
      const bool balanced = j.value("balanced", false);
      if (which == "train") {
        split.train.push_back(std::move(ex));
      } else if (which == "test") {
        if (balanced) split.balanced_test.push_back(ex);
        split.test.push_back(std::move(ex));
      } else {
        throw FormatError(line_no, "split must be train or test");
      }
    } catch (const json::exception& e) {
      throw FormatError(line_no, e.what());
    } catch (const InvalidArgument& e) {
      throw FormatError(line_no, e.what());
    }
  }
  return split;
}

DatasetStats dataset_stats(std::string name, const DatasetSplit& split) {
  DatasetStats s;
  s.name = std::move(name);
  s.train = split.train.size();
  s.test = split.test.size();
  s.balanced_test = split.balanced_test.size();
  s.total = s.train + s.test;
  std::map<EntityKind, std::set<std::string>> all, bal;
  for (const auto* part : {&split.train, &split.test})
    for (const auto& ex : *part)
      for (const auto& e : ex.entities()) all[e.kind()].insert(e.name());
  for (const auto& ex : split.balanced_test)
    for (const auto& e : ex.entities()) bal[e.kind()].insert(e.name());
  for (const auto& [k, names] : all) {
    s.unique[k] = names.size();
    s.unique_balanced[k] = bal[k].size();
  }
  return s;
}

void write_stats_tsv(const std::vector<DatasetStats>& rows, std::ostream& sink) {
  constexpr EntityKind kinds[] = {EntityKind::Gene, EntityKind::Variant, EntityKind::Drug, EntityKind::Disease};
  sink << "dataset\ttotal\ttrain\ttest\tbalanced_test\tbalanced_pct";
  for (auto k : kinds) sink << "\tunique_" << to_string(k) << 's';
  for (auto k : kinds) sink << "\tbalanced_unique_" << to_string(k) << 's';
  sink << '\n';
  for (const auto& r : rows) {
    sink << r.name << '\t' << r.total << '\t' << r.train << '\t' << r.test << '\t' << r.balanced_test << '\t';
    if (r.test) sink << std::llround(100.0 * static_cast<double>(r.balanced_test) / static_cast<double>(r.test));
    else sink << '-';
    for (const auto* m : {&r.unique, &r.unique_balanced})
      for (auto k : kinds) {
        auto it = m->find(k);
        sink << '\t';
        if (it == m->end()) sink << '-';
        else sink << it->second;
      }
    sink << '\n';
  }
}

}  // namespace repprobe
