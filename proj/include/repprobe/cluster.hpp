#pragma once
// Ward agglomerative clustering, HDBSCAN-style density clustering, 2D
// projections and cluster homogeneity.

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "repprobe/error.hpp"

namespace repprobe {

/// One agglomeration. Clusters 0..n-1 are the input rows; the cluster created
/// by step k gets id n + k. merged_a < merged_b.
struct LinkageStep {
  std::size_t merged_a = 0;
  std::size_t merged_b = 0;
  double distance = 0.0;
  std::size_t new_size = 0;
};

using Linkage = std::vector<LinkageStep>;

/// Ward linkage over the rows of `x` with Lance-Williams updates. Distances
/// follow the usual convention: sqrt(2 * increase in within-cluster sum of
/// squares), so two singletons merge at their Euclidean distance. Ties go to
/// the pair with the smaller cluster ids.
Linkage hac_ward_impl(const Eigen::MatrixXd& x);

template <typename Derived>
Linkage hac_ward(const Eigen::MatrixBase<Derived>& x) {
  if (!x.allFinite()) throw NonFinite("hac_ward input");
  return hac_ward_impl(x.template cast<double>());
}

/// Row vectors of possibly different lengths; throws DimensionMismatch.
Linkage hac_ward(const std::vector<std::vector<double>>& rows);

/// Cluster id per point; -1 marks noise (density clustering only).
struct ClusterAssignment {
  std::vector<int> cluster;

  std::size_t size() const noexcept { return cluster.size(); }
  int n_clusters() const;
  std::size_t noise() const;
};

/// Exactly one of the two must be set.
struct DendrogramCut {
  std::optional<double> threshold;  // merges strictly below it are kept
  std::optional<int> n_clusters;
};

/// Flat clusters from a linkage. Cluster ids are numbered by first
/// appearance in point order.
ClusterAssignment cut_dendrogram(const Linkage& steps, const DendrogramCut& cut);

/// HDBSCAN with min_samples = min_cluster_size and excess-of-mass selection.
/// When no split yields two clusters of the minimum size, a dataset of at
/// least min_cluster_size points forms one cluster.
ClusterAssignment density_cluster(const Eigen::MatrixXd& points, int min_cluster_size);

struct ClusterHomogeneity {
  int cluster = 0;
  std::size_t size = 0;
  std::string top_label;  // smallest label among the most frequent
  double value = 0.0;
};

struct HomogeneityReport {
  std::vector<ClusterHomogeneity> clusters;  // by cluster id, noise excluded
  std::optional<double> mean;                // unweighted over clusters
};

HomogeneityReport homogeneity(const ClusterAssignment& assignment, const std::vector<std::string>& labels);

struct ProjectedPoint {
  std::string id;
  double x = 0.0;
  double y = 0.0;
};

struct Projection {
  std::vector<ProjectedPoint> points;
  bool degenerate = false;  // rank < 2: y is identically zero
};

/// Top two principal components of the centred rows. Each component's sign
/// makes its largest-magnitude loading positive.
Projection pca_project2d(const std::vector<std::string>& ids, const Eigen::MatrixXd& x);

/// `id<TAB>x<TAB>y` lines, optional `id x y` header. Ids must be in `known`.
std::vector<ProjectedPoint> load_external_projection(std::istream& source, const std::set<std::string>& known);

Eigen::MatrixXd projection_matrix(const std::vector<ProjectedPoint>& points);

void write_linkage_tsv(const Linkage& steps, std::ostream& sink);
void write_clusters_tsv(const std::vector<std::string>& ids, const ClusterAssignment& assignment,
                        const std::vector<std::string>& labels, std::ostream& sink);
void write_homogeneity_tsv(const HomogeneityReport& report, std::ostream& sink);

}  // namespace repprobe
