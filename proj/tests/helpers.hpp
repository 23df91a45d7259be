#pragma once
// Test-side adapters between library results and the oracles.

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "repprobe/cluster.hpp"

namespace testing {

// Replays a linkage into member sets and compares with the naive Ward merge
// sequence. Tied merges may legitimately come in another order, so a step
// matches when its pair of member sets and distance agree.
inline bool same_ward_tree(const repprobe::Linkage& steps, const std::vector<oracle::WardMerge>& expect,
                           std::size_t n, double tol) {
  if (steps.size() != expect.size()) return false;
  std::vector<std::set<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members.push_back({i});
  using Merge = std::pair<std::set<std::size_t>, std::set<std::size_t>>;
  auto canon = [](std::set<std::size_t> a, std::set<std::size_t> b) {
    return *a.begin() < *b.begin() ? Merge{a, b} : Merge{b, a};
  };
  std::vector<std::pair<Merge, double>> got;
  for (const auto& s : steps) {
    got.push_back({canon(members[s.merged_a], members[s.merged_b]), s.distance});
    std::set<std::size_t> u = members[s.merged_a];
    u.insert(members[s.merged_b].begin(), members[s.merged_b].end());
    if (u.size() != s.new_size) return false;
    members.push_back(u);
  }
  for (std::size_t k = 0; k < expect.size(); ++k) {
    const Merge want = canon(expect[k].a, expect[k].b);
    bool found = false;
    for (const auto& [m, d] : got)
      if (m == want && std::abs(d - expect[k].distance) <= tol * std::max(1.0, expect[k].distance)) found = true;
    if (!found) return false;
  }
  return true;
}

inline bool monotone(const repprobe::Linkage& steps) {
  for (std::size_t i = 1; i < steps.size(); ++i)
    if (steps[i].distance < steps[i - 1].distance - 1e-12) return false;
  return true;
}

inline Eigen::MatrixXd gaussian_blobs(int per_blob, double separation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd x(2 * per_blob, 2);
  for (int i = 0; i < 2 * per_blob; ++i) {
    x(i, 0) = n01(rng) + (i < per_blob ? 0.0 : separation);
    x(i, 1) = n01(rng);
  }
  return x;
}

}  // namespace testing
