#pragma once
// Task datasets: entity pairs (true + negatively sampled false), quadruples,
// sentence rendering, train/test split and test-set balancing.

#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "repprobe/kb.hpp"

namespace repprobe {

enum class PairType { DrugVariant, DrugGene, VariantGene };

inline constexpr PairType kAllPairTypes[] = {PairType::DrugVariant, PairType::DrugGene,
                                             PairType::VariantGene};

std::string_view to_string(PairType t);
std::optional<PairType> parse_pair_type(std::string_view text);
/// (kind of `a`, kind of `b`) for the pair type, in template order.
std::pair<EntityKind, EntityKind> kinds_of(PairType t);

struct EntityPair {
  Entity a;
  Entity b;
  PairType type;
  bool label = false;

  friend bool operator==(const EntityPair&, const EntityPair&) = default;
};

struct Quadruple {
  Entity variant;
  Entity gene;
  Entity disease;
  std::vector<Entity> drugs;  // KB order
  Significance label = Significance::SensitivityResponse;
  std::vector<std::string> evidence_ids;

  /// (variant, gene, disease, sorted drug names): the uniqueness key.
  std::vector<std::string> key() const;

  friend bool operator==(const Quadruple&, const Quadruple&) = default;
};

/// Positive class id used everywhere: true pairs and Sensitivity/Response
/// quadruples are 1, false pairs and Resistance quadruples are 0.
inline constexpr int kPositiveLabel = 1;
int label_of(Significance s);

struct LabeledExample {
  using Source = std::variant<EntityPair, Quadruple>;

  std::string id;
  std::string text;
  int label = 0;
  Source source;
  std::vector<std::string> evidence_ids;
  EvidenceLevel level = EvidenceLevel::Unknown;  // strongest level among evidence_ids
  int rating = 0;                                // highest rating among evidence_ids

  bool is_quadruple() const noexcept { return std::holds_alternative<Quadruple>(source); }
  std::vector<Entity> entities() const;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

std::vector<EntityPair> extract_true_pairs(const KnowledgeBase& kb, PairType type);

/// Draws `count` distinct unattested pairs uniformly from the cross product of
/// the entities seen in that pair type's true pairs.
std::vector<EntityPair> sample_false_pairs(const KnowledgeBase& kb, PairType type, std::size_t count,
                                           std::uint64_t seed);

struct QuadrupleExtraction {
  std::vector<Quadruple> quadruples;
  std::size_t non_uniform_dropped = 0;
};

QuadrupleExtraction extract_quadruples(const KnowledgeBase& kb);

std::string render_sequence(const EntityPair& pair);
std::string render_sequence(const Quadruple& quad);

/// Evidence items attesting a pair (both entities mentioned by the item).
std::vector<std::string> attesting_evidence(const KnowledgeBase& kb, const EntityPair& pair);

LabeledExample make_example(const EntityPair& pair, const KnowledgeBase& kb);
LabeledExample make_example(const Quadruple& quad, const KnowledgeBase& kb);

struct DatasetSplit {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
  std::vector<LabeledExample> balanced_test;
  std::uint64_t seed = 0;
};

/// Seeded uniform shuffle; train gets round(n * train_fraction) examples.
DatasetSplit split_train_test(std::vector<LabeledExample> examples, double train_fraction,
                              std::uint64_t seed);

enum class Imbalance { TrueImbalanced, FalseImbalanced, Neutral };
std::string_view to_string(Imbalance v);

struct ImbalanceThresholds {
  double true_imbalanced = 0.70;   // strictly above
  double false_imbalanced = 0.30;  // strictly below

  friend bool operator==(const ImbalanceThresholds&, const ImbalanceThresholds&) = default;
};

struct ImbalanceVerdict {
  Entity entity;
  std::size_t positive = 0;
  std::size_t total = 0;  // 0 means the fraction is undefined
  Imbalance verdict = Imbalance::Neutral;

  std::optional<double> true_fraction() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(positive) / static_cast<double>(total);
  }
};

ImbalanceVerdict classify_entity(Entity entity, std::size_t positive, std::size_t total,
                                 const ImbalanceThresholds& thresholds = {});

/// One verdict per entity occurring in `train`, sorted by entity.
std::vector<ImbalanceVerdict> compute_imbalanced_entities(const std::vector<LabeledExample>& train,
                                                          int positive_class = kPositiveLabel,
                                                          const ImbalanceThresholds& thresholds = {});

using VerdictTable = std::map<Entity, Imbalance>;
VerdictTable make_verdict_table(const std::vector<ImbalanceVerdict>& verdicts);

/// Pair: one element true-imbalanced and the other not false-imbalanced, or
/// one false-imbalanced and the other not true-imbalanced. Quadruple: one
/// element true-imbalanced and no other false-imbalanced, or the mirror.
/// Entities missing from the table count as Neutral.
bool is_imbalanced(const LabeledExample& example, const VerdictTable& verdicts);

/// Copies `split` with balanced_test = test minus imbalanced examples.
DatasetSplit balance_test_set(const DatasetSplit& split, const std::vector<ImbalanceVerdict>& verdicts);

// JSONL export, one object per example:
// {id, text, label, pair_type ("drug_variant" | ... | "quad"), entities, split,
//  balanced, evidence_ids, level, rating}
void write_dataset_jsonl(const DatasetSplit& split, std::ostream& sink);
/// Rebuilds a split written by write_dataset_jsonl. Every text is re-rendered
/// and must match byte for byte.
DatasetSplit read_dataset_jsonl(std::istream& source);

struct DatasetStats {
  std::string name;
  std::size_t total = 0, train = 0, test = 0, balanced_test = 0;
  std::map<EntityKind, std::size_t> unique;           // whole dataset
  std::map<EntityKind, std::size_t> unique_balanced;  // balanced test only
};

DatasetStats dataset_stats(std::string name, const DatasetSplit& split);
void write_stats_tsv(const std::vector<DatasetStats>& rows, std::ostream& sink);

}  // namespace repprobe
