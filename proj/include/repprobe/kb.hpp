#pragma once
// Knowledge-base ingestion: evidence items, parsing (JSON/TSV), serialization
// and the Supports/Predictive filter.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace repprobe {

enum class EntityKind { Gene, Variant, Drug, Disease };

std::string_view to_string(EntityKind kind);
std::optional<EntityKind> parse_entity_kind(std::string_view text);

/// A verbatim KB surface form tagged with its kind. Equality is case-sensitive.
class Entity {
 public:
  Entity(EntityKind kind, std::string name);

  EntityKind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }

  friend bool operator==(const Entity&, const Entity&) = default;
  friend auto operator<=>(const Entity&, const Entity&) = default;

 private:
  EntityKind kind_;
  std::string name_;
};

enum class Direction { Supports, DoesNotSupport, Other };
enum class EvidenceType { Predictive, Prognostic, Diagnostic, Predisposing, Functional, Other };
enum class EvidenceLevel { A, B, C, D, E, Unknown };

std::string_view to_string(Direction d);
std::string_view to_string(EvidenceType t);
std::string_view to_string(EvidenceLevel l);
std::optional<EvidenceLevel> parse_level(std::string_view text);

enum class Significance { SensitivityResponse, Resistance, Excluded };
std::string_view to_string(Significance s);

struct ClinicalSignificance {
  std::string raw;
  Significance normalized = Significance::Excluded;

  /// "Sensitivity/Response" and "Reduced Sensitivity" map to
  /// SensitivityResponse, "Resistant" to Resistance, anything else is Excluded.
  static ClinicalSignificance from_raw(std::string raw);

  friend bool operator==(const ClinicalSignificance&, const ClinicalSignificance&) = default;
};

struct EvidenceItem {
  std::string id;
  Entity variant{EntityKind::Variant, "?"};
  Entity gene{EntityKind::Gene, "?"};
  Entity disease{EntityKind::Disease, "?"};
  std::vector<Entity> drugs;
  Direction direction = Direction::Other;
  EvidenceType evidence_type = EvidenceType::Other;
  ClinicalSignificance significance;
  EvidenceLevel level = EvidenceLevel::Unknown;
  int rating = 0;

  /// All entities the item mentions, in (variant, gene, disease, drugs...) order.
  std::vector<Entity> entities() const;

  friend bool operator==(const EvidenceItem&, const EvidenceItem&) = default;
};

/// Immutable collection of evidence items with an entity -> item-id index.
class KnowledgeBase {
 public:
  using Index = std::map<Entity, std::vector<std::string>>;

  KnowledgeBase() = default;
  explicit KnowledgeBase(std::vector<EvidenceItem> items);

  const std::vector<EvidenceItem>& items() const noexcept { return items_; }
  const Index& index() const noexcept { return index_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  /// Item ids mentioning `e`; empty when the entity is unknown.
  const std::vector<std::string>& items_mentioning(const Entity& e) const;
  const EvidenceItem* find(std::string_view id) const;

  friend bool operator==(const KnowledgeBase& a, const KnowledgeBase& b) {
    return a.items_ == b.items_ && a.index_ == b.index_;
  }

 private:
  std::vector<EvidenceItem> items_;
  Index index_;
  std::map<std::string, std::size_t, std::less<>> by_id_;
};

enum class KbFormat { Json, Tsv };

struct RecordReject {
  std::string locator;  // "record 3" (JSON) or "line 7" (TSV)
  std::string field;
  std::string reason;
};

struct ParseResult {
  KnowledgeBase kb;
  std::vector<RecordReject> rejects;
};

struct ParseOptions {
  /// Strict parsing throws MalformedRecord on the first bad record; lenient
  /// parsing collects rejects and keeps going.
  bool strict = true;
};

ParseResult parse_kb(std::istream& source, KbFormat format, ParseOptions options = {});
ParseResult parse_kb(std::string_view source, KbFormat format, ParseOptions options = {});

void serialize_kb(const KnowledgeBase& kb, KbFormat format, std::ostream& sink);
std::string serialize_kb(const KnowledgeBase& kb, KbFormat format);

/// Keeps items with direction Supports, type Predictive and a significance
/// that is not Excluded, preserving order.
KnowledgeBase filter_predictive_supports(const KnowledgeBase& kb);

}  // namespace repprobe

template <>
struct std::hash<repprobe::Entity> {
  std::size_t operator()(const repprobe::Entity& e) const noexcept {
    return std::hash<std::string>{}(e.name()) * 31u + static_cast<std::size_t>(e.kind());
  }
};
