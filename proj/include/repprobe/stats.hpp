#pragma once
// Evaluation statistics: ROC AUC, Brier score, Spearman and Mann-Whitney
// tests, error-vs-frequency analysis and evidence stratification.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "repprobe/dataset.hpp"
#include "repprobe/kb.hpp"

namespace repprobe {

struct ScoredExample {
  std::string id;
  double score = 0.0;  // predicted probability of the positive class
  int label = 0;       // 0 or 1
  std::vector<Entity> entity_refs;
  std::size_t evidence_count = 0;
  EvidenceLevel level = EvidenceLevel::Unknown;
  int rating = 0;

  double error() const noexcept { return label == 1 ? 1.0 - score : score; }
};

ScoredExample make_scored(const LabeledExample& example, double score);

/// Midranks (1-based, ties share the mean rank).
std::vector<double> midranks(std::span<const double> values);

/// Mann-Whitney formulation of the ROC AUC; tied scores count one half.
double auc(std::span<const double> scores, std::span<const int> labels);
double auc(const std::vector<ScoredExample>& scored);

double brier(std::span<const double> scores, std::span<const int> labels);
double brier(const std::vector<ScoredExample>& scored);

struct CorrelationResult {
  double rho = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

enum class PValueMethod { Exact, MonteCarlo, TApproximation };

/// Spearman rank correlation (Pearson on midranks). Two-sided p-value by
/// exact permutation enumeration for n <= 10, seeded Monte-Carlo permutation
/// (1e5 draws) for n <= 20, and the t approximation above that.
CorrelationResult spearman(std::span<const double> x, std::span<const double> y,
                           std::uint64_t permutation_seed = 0x5EEDull);
PValueMethod spearman_method(std::size_t n);

struct MannWhitneyResult {
  double u = 0.0;  // statistic of the first sample: #(a > b) + 0.5 #(a == b)
  double p_value = 1.0;
};

/// Two-sided Mann-Whitney U; exact enumeration when |a| + |b| <= 20,
/// otherwise the tie-corrected normal approximation with continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);
MannWhitneyResult mann_whitney_exact(std::span<const double> a, std::span<const double> b);
MannWhitneyResult mann_whitney_normal(std::span<const double> a, std::span<const double> b);

enum class FrequencyKey { TruePairCountInTrain, EvidenceItemCount };
std::string_view to_string(FrequencyKey k);

using FrequencyTable = std::map<Entity, std::size_t>;

/// Number of positive training examples containing each entity.
FrequencyTable true_pair_counts(const std::vector<LabeledExample>& train);
/// Number of evidence items mentioning each entity.
FrequencyTable evidence_item_counts(const KnowledgeBase& kb);

struct FrequencyPoint {
  std::string id;
  std::string entity;
  std::size_t frequency = 0;
  int label = 0;
  double error = 0.0;
};

struct FrequencyAnalysis {
  EntityKind kind = EntityKind::Drug;
  std::vector<FrequencyPoint> points;
  // Spearman(frequency, error) per label; empty when undefined (constant
  // input or fewer than 3 points).
  std::optional<CorrelationResult> true_examples;
  std::optional<CorrelationResult> false_examples;
};

FrequencyAnalysis error_vs_frequency(const std::vector<ScoredExample>& scored, const FrequencyTable& frequency,
                                     EntityKind kind);

enum class StratifyBy { Level, Rating };

struct Stratum {
  std::string key;
  std::size_t n = 0;
  std::optional<double> auc;  // empty for single-class strata
  std::optional<double> brier;
};

std::vector<Stratum> stratify_by_evidence(const std::vector<ScoredExample>& scored, StratifyBy by);

struct AuditCriteria {
  std::vector<EvidenceLevel> levels{EvidenceLevel::A, EvidenceLevel::B};
  std::vector<int> ratings{4, 5};
};

struct AuditRow {
  std::string id;
  std::vector<Entity> entities;
  int label = 0;
  EvidenceLevel level = EvidenceLevel::Unknown;
  int rating = 0;
  std::map<std::string, double> error;  // per model
  double max_error = 0.0;
};

/// Qualifying rows across all models, sorted by the largest per-model error
/// (descending), then by id.
std::vector<AuditRow> audit_well_known(const std::map<std::string, std::vector<ScoredExample>>& by_model,
                                       const AuditCriteria& criteria = {});

}  // namespace repprobe
