#pragma once
// Non-pretrained KNN control classifier over one-hot entity encodings.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "repprobe/dataset.hpp"

namespace repprobe {

/// Per-kind lexicographic vocabularies built from training entities.
class OneHotVocab {
 public:
  OneHotVocab() = default;
  static OneHotVocab build(const std::vector<LabeledExample>& train);

  std::size_t dimension(EntityKind kind) const;
  std::optional<std::size_t> position(const Entity& e) const;
  const std::vector<std::string>& names(EntityKind kind) const;

 private:
  std::map<EntityKind, std::vector<std::string>> names_;
};

/// Blocks are (variant, gene, disease, drug) for quadruples and the template
/// order (a, b) for pairs. Unknown entities leave their block all-zero; each
/// drug of a multi-drug quadruple sets its own 1.
Eigen::VectorXd encode_one_hot(const LabeledExample& example, const OneHotVocab& vocab);
/// One encoded example per row.
Eigen::MatrixXd encode_one_hot(const std::vector<LabeledExample>& examples, const OneHotVocab& vocab);

/// Fraction of the k nearest training rows (Euclidean, ties broken by row
/// index) that carry `positive_label`.
double knn_predict(const Eigen::MatrixXd& train, const std::vector<int>& labels, const Eigen::VectorXd& query,
                   int k, int positive_label = kPositiveLabel);

/// Scores every test example against a vocabulary built from `train` only.
std::vector<double> knn_scores(const std::vector<LabeledExample>& train, const std::vector<LabeledExample>& test,
                               int k);

struct CrossValidation {
  std::vector<std::size_t> fold_sizes;
  std::vector<std::optional<double>> fold_auc;  // empty for single-class folds
  std::optional<double> mean_auc;               // over folds with a defined AUC
  double sd_auc = 0.0;                          // sample sd; 0 with fewer than 2 folds
  std::optional<double> pooled_auc;             // AUC of all out-of-fold scores
};

CrossValidation cross_validate(const std::vector<LabeledExample>& examples, int k_folds, std::uint64_t seed,
                               int knn_k = 5);

}  // namespace repprobe
