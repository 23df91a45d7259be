#include "repprobe/kb.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "repprobe/error.hpp"

namespace repprobe {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  auto b = s.begin();
  auto e = s.end();
  while (b != e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e != b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
  return std::string(b, e);
}

// Thrown inside a single record; converted to a reject or MalformedRecord.
struct FieldError {
  std::string field;
  std::string reason;
};

Direction parse_direction(const std::string& s) {
  if (s == "Supports") return Direction::Supports;
  if (s == "Does Not Support" || s == "DoesNotSupport") return Direction::DoesNotSupport;
  return Direction::Other;
}

EvidenceType parse_type(const std::string& s) {
  static const std::array<std::pair<std::string_view, EvidenceType>, 5> table{{
      {"Predictive", EvidenceType::Predictive},
      {"Prognostic", EvidenceType::Prognostic},
      {"Diagnostic", EvidenceType::Diagnostic},
      {"Predisposing", EvidenceType::Predisposing},
      {"Functional", EvidenceType::Functional},
  }};
  for (const auto& [name, t] : table)
    if (s == name) return t;
  return EvidenceType::Other;
}

Entity make_entity(EntityKind kind, const std::string& field, const std::string& raw) {
  if (trim(raw).empty()) throw FieldError{field, "empty name"};
  return Entity(kind, raw);
}

std::vector<Entity> make_drugs(const std::vector<std::string>& names) {
  if (names.empty()) throw FieldError{"drugs", "at least one drug required"};
  std::vector<Entity> drugs;
  for (const auto& n : names) {
    Entity d = make_entity(EntityKind::Drug, "drugs", n);
    // KB order is kept; repeated drugs collapse onto their first occurrence.
    if (std::find(drugs.begin(), drugs.end(), d) == drugs.end()) drugs.push_back(std::move(d));
  }
  return drugs;
}

EvidenceLevel level_from(const std::string& raw) {
  const std::string t = trim(raw);
  if (t.empty() || t == "Unknown" || t == "NA" || t == "N/A") return EvidenceLevel::Unknown;
  if (auto l = parse_level(t)) return *l;
  throw FieldError{"level", "unrecognized evidence level '" + t + "'"};
}

int rating_from_string(const std::string& raw) {
  const std::string t = trim(raw);
  if (t.empty() || t == "NA" || t == "N/A") return 0;
  if (t.size() == 1 && t[0] >= '0' && t[0] <= '5') return t[0] - '0';
  throw FieldError{"rating", "rating must be an integer 0-5, got '" + t + "'"};
}

const json& require(const json& rec, const char* field) {
  auto it = rec.find(field);
  if (it == rec.end() || it->is_null()) throw FieldError{field, "missing"};
  return *it;
}

std::string require_string(const json& rec, const char* field) {
  const json& v = require(rec, field);
  if (!v.is_string()) throw FieldError{field, "expected a string"};
  return v.get<std::string>();
}

EvidenceItem item_from_json(const json& rec, std::size_t position) {
  if (!rec.is_object()) throw FieldError{"", "record is not an object"};
  EvidenceItem item;

  if (auto it = rec.find("id"); it != rec.end() && !it->is_null()) {
    if (it->is_string()) item.id = it->get<std::string>();
    else if (it->is_number_integer()) item.id = std::to_string(it->get<std::int64_t>());
    else throw FieldError{"id", "expected string or integer"};
    if (trim(item.id).empty()) throw FieldError{"id", "empty id"};
  } else {
    item.id = "#" + std::to_string(position);
  }

  item.variant = make_entity(EntityKind::Variant, "variant", require_string(rec, "variant"));
  item.gene = make_entity(EntityKind::Gene, "gene", require_string(rec, "gene"));

  const json& disease = require(rec, "disease");
  if (disease.is_string()) {
    item.disease = make_entity(EntityKind::Disease, "disease", disease.get<std::string>());
  } else if (disease.is_array()) {
    if (disease.size() != 1) throw FieldError{"disease", "exactly one disease per evidence item"};
    if (!disease[0].is_string()) throw FieldError{"disease", "expected a string"};
    item.disease = make_entity(EntityKind::Disease, "disease", disease[0].get<std::string>());
  } else {
    throw FieldError{"disease", "expected a string"};
  }

  const json& drugs = require(rec, "drugs");
  std::vector<std::string> names;
  if (drugs.is_string()) {
    names.push_back(drugs.get<std::string>());
  } else if (drugs.is_array()) {
    for (const auto& d : drugs) {
      if (!d.is_string()) throw FieldError{"drugs", "expected strings"};
      names.push_back(d.get<std::string>());
    }
  } else {
    throw FieldError{"drugs", "expected an array of strings"};
  }
  item.drugs = make_drugs(names);

  item.direction = parse_direction(require_string(rec, "direction"));
  item.evidence_type = parse_type(require_string(rec, "type"));
  item.significance = ClinicalSignificance::from_raw(require_string(rec, "significance"));

  if (auto it = rec.find("level"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) throw FieldError{"level", "expected a string"};
    item.level = level_from(it->get<std::string>());
  }
  if (auto it = rec.find("rating"); it != rec.end() && !it->is_null()) {
    if (it->is_number_integer()) {
      const auto r = it->get<std::int64_t>();
      if (r < 0 || r > 5) throw FieldError{"rating", "rating must be within 0-5"};
      item.rating = static_cast<int>(r);
    } else if (it->is_string()) {
      item.rating = rating_from_string(it->get<std::string>());
    } else {
      throw FieldError{"rating", "expected an integer"};
    }
  }
  return item;
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

constexpr std::array<std::string_view, 10> kTsvColumns{
    "id", "variant", "gene", "disease", "drugs", "direction", "type", "significance", "level", "rating"};

class Collector {
 public:
  explicit Collector(ParseOptions options) : options_(options) {}

  void accept(EvidenceItem item, const std::string& locator) {
    if (!ids_.insert(item.id).second) {
      reject(locator, FieldError{"id", "duplicate id '" + item.id + "'"});
      return;
    }
    items_.push_back(std::move(item));
  }

  void reject(const std::string& locator, const FieldError& err) {
    if (options_.strict) throw MalformedRecord(locator, err.field, err.reason);
    rejects_.push_back({locator, err.field, err.reason});
  }

  ParseResult finish() && { return {KnowledgeBase(std::move(items_)), std::move(rejects_)}; }

 private:
  ParseOptions options_;
  std::vector<EvidenceItem> items_;
  std::vector<RecordReject> rejects_;
  std::set<std::string> ids_;
};

ParseResult parse_json(std::string_view text, ParseOptions options) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw MalformedRecord("document", "", e.what());
  }
  if (!doc.is_array()) throw MalformedRecord("document", "", "expected a JSON array of records");

  Collector collector(options);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string locator = "record " + std::to_string(i);
    try {
      collector.accept(item_from_json(doc[i], i), locator);
    } catch (const FieldError& err) {
      collector.reject(locator, err);
    }
  }
  return std::move(collector).finish();
}

ParseResult parse_tsv(std::string_view text, ParseOptions options) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      auto pos = text.find('\n', start);
      if (pos == std::string_view::npos) pos = text.size();
      std::string_view line = text.substr(start, pos - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      start = pos + 1;
    }
  }
  const auto header = split(lines.front(), '\t');
  std::map<std::string, std::size_t, std::less<>> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[trim(header[i])] = i;
  for (std::string_view required :
       {"variant", "gene", "disease", "drugs", "direction", "type", "significance"}) {
    if (!column.contains(required))
      throw MalformedRecord("line 1", std::string(required), "missing header column");
  }

  Collector collector(options);
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const std::string locator = "line " + std::to_string(ln + 1);
    const auto cells = split(lines[ln], '\t');
    auto cell = [&](std::string_view name) -> std::optional<std::string> {
      auto it = column.find(name);
      if (it == column.end() || it->second >= cells.size()) return std::nullopt;
      return cells[it->second];
    };
    auto need = [&](std::string_view name) {
      auto v = cell(name);
      if (!v) throw FieldError{std::string(name), "missing"};
      return *v;
    };
    try {
      EvidenceItem item;
      auto id = cell("id");
      item.id = id && !trim(*id).empty() ? *id : "#" + std::to_string(ln - 1);
      item.variant = make_entity(EntityKind::Variant, "variant", need("variant"));
      item.gene = make_entity(EntityKind::Gene, "gene", need("gene"));
      item.disease = make_entity(EntityKind::Disease, "disease", need("disease"));
      std::vector<std::string> names;
      for (auto& n : split(need("drugs"), ','))
        if (!trim(n).empty()) names.push_back(trim(n));
      item.drugs = make_drugs(names);
      item.direction = parse_direction(need("direction"));
      item.evidence_type = parse_type(need("type"));
      item.significance = ClinicalSignificance::from_raw(need("significance"));
      if (auto l = cell("level")) item.level = level_from(*l);
      if (auto r = cell("rating")) item.rating = rating_from_string(*r);
      collector.accept(std::move(item), locator);
    } catch (const FieldError& err) {
      collector.reject(locator, err);
    }
  }
  return std::move(collector).finish();
}

void check_tsv_cell(const std::string& value, bool drug) {
  if (value.find_first_of("\t\n\r") != std::string::npos || (drug && value.find(',') != std::string::npos))
    throw InvalidArgument("value '" + value + "' cannot be written to TSV");
}

}  // namespace

std::string_view to_string(EntityKind kind) {
  switch (kind) {
    case EntityKind::Gene: return "gene";
    case EntityKind::Variant: return "variant";
    case EntityKind::Drug: return "drug";
    case EntityKind::Disease: return "disease";
  }
  return "?";
}

std::optional<EntityKind> parse_entity_kind(std::string_view text) {
  for (auto k : {EntityKind::Gene, EntityKind::Variant, EntityKind::Drug, EntityKind::Disease})
    if (to_string(k) == text) return k;
  return std::nullopt;
}

Entity::Entity(EntityKind kind, std::string name) : kind_(kind), name_(std::move(name)) {
  if (trim(name_).empty()) throw InvalidArgument("entity name must be non-empty");
}

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::Supports: return "Supports";
    case Direction::DoesNotSupport: return "Does Not Support";
    case Direction::Other: return "Other";
  }
  return "Other";
}

std::string_view to_string(EvidenceType t) {
  switch (t) {
    case EvidenceType::Predictive: return "Predictive";
    case EvidenceType::Prognostic: return "Prognostic";
    case EvidenceType::Diagnostic: return "Diagnostic";
    case EvidenceType::Predisposing: return "Predisposing";
    case EvidenceType::Functional: return "Functional";
    case EvidenceType::Other: return "Other";
  }
  return "Other";
}

std::string_view to_string(EvidenceLevel l) {
  switch (l) {
    case EvidenceLevel::A: return "A";
    case EvidenceLevel::B: return "B";
    case EvidenceLevel::C: return "C";
    case EvidenceLevel::D: return "D";
    case EvidenceLevel::E: return "E";
    case EvidenceLevel::Unknown: return "Unknown";
  }
  return "Unknown";
}

std::optional<EvidenceLevel> parse_level(std::string_view text) {
  if (text.size() == 1 && text[0] >= 'A' && text[0] <= 'E')
    return static_cast<EvidenceLevel>(text[0] - 'A');
  if (text == "Unknown") return EvidenceLevel::Unknown;
  return std::nullopt;
}

std::string_view to_string(Significance s) {
  switch (s) {
    case Significance::SensitivityResponse: return "Sensitivity/Response";
    case Significance::Resistance: return "Resistance";
    case Significance::Excluded: return "Excluded";
  }
  return "Excluded";
}

ClinicalSignificance ClinicalSignificance::from_raw(std::string raw) {
  ClinicalSignificance cs;
  if (raw == "Sensitivity/Response" || raw == "Reduced Sensitivity")
    cs.normalized = Significance::SensitivityResponse;
  else if (raw == "Resistant")
    cs.normalized = Significance::Resistance;
  cs.raw = std::move(raw);
  return cs;
}

std::vector<Entity> EvidenceItem::entities() const {
  std::vector<Entity> out{variant, gene, disease};
  out.insert(out.end(), drugs.begin(), drugs.end());
  return out;
}

KnowledgeBase::KnowledgeBase(std::vector<EvidenceItem> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& item = items_[i];
    if (!by_id_.emplace(item.id, i).second) throw DuplicateId(item.id);
    for (const auto& e : item.entities()) {
      auto& ids = index_[e];
      if (ids.empty() || ids.back() != item.id) ids.push_back(item.id);
    }
  }
}

const std::vector<std::string>& KnowledgeBase::items_mentioning(const Entity& e) const {
  static const std::vector<std::string> none;
  auto it = index_.find(e);
  return it == index_.end() ? none : it->second;
}

const EvidenceItem* KnowledgeBase::find(std::string_view id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &items_[it->second];
}

ParseResult parse_kb(std::istream& source, KbFormat format, ParseOptions options) {
  std::string text{std::istreambuf_iterator<char>(source), std::istreambuf_iterator<char>()};
  return parse_kb(std::string_view(text), format, options);
}

ParseResult parse_kb(std::string_view source, KbFormat format, ParseOptions options) {
  if (trim(source).empty()) throw EmptySource();
  return format == KbFormat::Json ? parse_json(source, options) : parse_tsv(source, options);
}

void serialize_kb(const KnowledgeBase& kb, KbFormat format, std::ostream& sink) {
  if (format == KbFormat::Json) {
    json doc = json::array();
    for (const auto& item : kb.items()) {
      json drugs = json::array();
      for (const auto& d : item.drugs) drugs.push_back(d.name());
      doc.push_back({{"id", item.id},
                     {"variant", item.variant.name()},
                     {"gene", item.gene.name()},
                     {"disease", item.disease.name()},
                     {"drugs", std::move(drugs)},
                     {"direction", to_string(item.direction)},
                     {"type", to_string(item.evidence_type)},
                     {"significance", item.significance.raw},
                     {"level", to_string(item.level)},
                     {"rating", item.rating}});
    }
    sink << doc.dump(1) << '\n';
    return;
  }

  for (std::size_t i = 0; i < kTsvColumns.size(); ++i) sink << (i ? "\t" : "") << kTsvColumns[i];
  sink << '\n';
  for (const auto& item : kb.items()) {
    std::string drugs;
    for (const auto& d : item.drugs) {
      check_tsv_cell(d.name(), true);
      drugs += (drugs.empty() ? "" : ",") + d.name();
    }
    for (const auto* v : {&item.id, &item.variant.name(), &item.gene.name(), &item.disease.name(),
                          &item.significance.raw})
      check_tsv_cell(*v, false);
    sink << item.id << '\t' << item.variant.name() << '\t' << item.gene.name() << '\t'
         << item.disease.name() << '\t' << drugs << '\t' << to_string(item.direction) << '\t'
         << to_string(item.evidence_type) << '\t' << item.significance.raw << '\t'
         << to_string(item.level) << '\t' << item.rating << '\n';
  }
}

std::string serialize_kb(const KnowledgeBase& kb, KbFormat format) {
  std::ostringstream out;
  serialize_kb(kb, format, out);
  return out.str();
}

KnowledgeBase filter_predictive_supports(const KnowledgeBase& kb) {
  std::vector<EvidenceItem> kept;
  std::copy_if(kb.items().begin(), kb.items().end(), std::back_inserter(kept), [](const EvidenceItem& it) {
    return it.direction == Direction::Supports && it.evidence_type == EvidenceType::Predictive &&
           it.significance.normalized != Significance::Excluded;
  });
  return KnowledgeBase(std::move(kept));
}

}  // namespace repprobe
