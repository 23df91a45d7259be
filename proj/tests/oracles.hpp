#pragma once
// Slow, independent reference implementations the tests compare against.
// Nothing here calls into the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// One-sided Jacobi: orthogonalise column pairs of A until convergence; the
// column norms are the singular values.
inline std::vector<double> jacobi_singular_values(Eigen::MatrixXd a) {
  if (a.rows() < a.cols()) a.transposeInPlace();
  const Eigen::Index n = a.cols();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        const Eigen::VectorXd cp = a.col(p);
        a.col(p) = c * cp - s * a.col(q);
        a.col(q) = s * cp + c * a.col(q);
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> sv(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) sv[static_cast<std::size_t>(j)] = a.col(j).norm();
  std::sort(sv.rbegin(), sv.rend());
  return sv;
}

inline double nuclear_norm(const Eigen::MatrixXd& a) {
  const auto sv = jacobi_singular_values(a);
  return std::accumulate(sv.begin(), sv.end(), 0.0);
}

// Ward by definition: at every step evaluate the increase in within-cluster
// sum of squares for every pair of current clusters, computed from scratch
// from centroids. Reports the merged member sets and sqrt(2 * increase).
struct WardMerge {
  std::set<std::size_t> a, b;
  double distance = 0.0;
};

inline double ess(const Eigen::MatrixXd& x, const std::set<std::size_t>& members) {
  Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(x.cols());
  for (auto i : members) c += x.row(static_cast<Eigen::Index>(i));
  c /= static_cast<double>(members.size());
  double s = 0.0;
  for (auto i : members) s += (x.row(static_cast<Eigen::Index>(i)) - c).squaredNorm();
  return s;
}

inline std::vector<WardMerge> naive_ward(const Eigen::MatrixXd& x) {
  std::vector<std::set<std::size_t>> clusters;
  for (Eigen::Index i = 0; i < x.rows(); ++i) clusters.push_back({static_cast<std::size_t>(i)});
  std::vector<WardMerge> out;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        std::set<std::size_t> u = clusters[i];
        u.insert(clusters[j].begin(), clusters[j].end());
        const double inc = ess(x, u) - ess(x, clusters[i]) - ess(x, clusters[j]);
        if (inc < best) {
          best = inc;
          bi = i;
          bj = j;
        }
      }
    }
    out.push_back({clusters[bi], clusters[bj], std::sqrt(2.0 * std::max(best, 0.0))});
    clusters[bi].insert(clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return out;
}

// Integer doubled midranks: 2 * midrank is always an integer.
inline std::vector<std::int64_t> doubled_midranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::int64_t> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    r[i] = 2 * less + equal + 1;
  }
  return r;
}

// Exact two-sided permutation p-value over all n! orderings of y.
inline double spearman_p(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = doubled_midranks(x);
  auto ry = doubled_midranks(y);
  const auto n = static_cast<std::int64_t>(x.size());
  auto stat = [&](const std::vector<std::int64_t>& b) {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) s += (rx[i] - (n + 1)) * (b[i] - (n + 1));
    return s < 0 ? -s : s;
  };
  const std::int64_t observed = stat(ry);
  std::vector<std::size_t> perm(ry.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::int64_t extreme = 0, total = 0;
  std::vector<std::int64_t> b(ry.size());
  do {
    for (std::size_t i = 0; i < perm.size(); ++i) b[i] = ry[perm[i]];
    if (stat(b) >= observed) ++extreme;
    ++total;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  const auto rx = doubled_midranks(x), ry = doubled_midranks(y);
  return pearson(std::vector<double>(rx.begin(), rx.end()), std::vector<double>(ry.begin(), ry.end()));
}

// Doubled U of the first sample: 2 * (#(a > b) + 0.5 #(a == b)).
inline std::int64_t doubled_u(const std::vector<double>& a, const std::vector<double>& b) {
  std::int64_t u = 0;
  for (double x : a)
    for (double y : b) u += x > y ? 2 : (x == y ? 1 : 0);
  return u;
}

// Exact two-sided Mann-Whitney: every way of choosing which pooled
// observations form the first sample.
inline double mann_whitney_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t n = pooled.size(), na = a.size();
  const auto centre = static_cast<std::int64_t>(na * b.size());  // doubled mean of U
  auto deviation = [&](std::int64_t u2) { return u2 > centre ? u2 - centre : centre - u2; };
  const std::int64_t observed = deviation(doubled_u(a, b));
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(na), true);
  std::int64_t extreme = 0, total = 0;
  do {
    std::vector<double> x, y;
    for (std::size_t i = 0; i < n; ++i) (pick[i] ? x : y).push_back(pooled[i]);
    if (deviation(doubled_u(x, y)) >= observed) ++extreme;
    ++total;
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

// AUC by counting every positive/negative pair.
inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      ++pairs;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Central differences of f at x, one coordinate at a time.
inline Eigen::VectorXd finite_difference(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                         double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

// Balancing by the literal rule, over entity names with a per-example list of
// elements. `kind` is 0 neutral, 1 true-imbalanced, -1 false-imbalanced.
struct Example {
  std::vector<std::string> elements;
  int label = 0;
  bool quad = false;
};

inline std::map<std::string, int> verdicts(const std::vector<Example>& train, double hi, double lo) {
  std::set<std::string> names;
  for (const auto& e : train) names.insert(e.elements.begin(), e.elements.end());
  std::map<std::string, int> out;
  for (const auto& name : names) {
    int pos = 0, tot = 0;
    for (const auto& e : train) {
      if (std::find(e.elements.begin(), e.elements.end(), name) == e.elements.end()) continue;
      ++tot;
      pos += e.label;
    }
    const double f = static_cast<double>(pos) / tot;
    out[name] = f > hi ? 1 : (f < lo ? -1 : 0);
  }
  return out;
}

inline bool imbalanced(const Example& e, const std::map<std::string, int>& v) {
  auto of = [&](const std::string& n) {
    auto it = v.find(n);
    return it == v.end() ? 0 : it->second;
  };
  const std::size_t m = e.elements.size();
  for (std::size_t i = 0; i < m; ++i) {
    const int vi = of(e.elements[i]);
    if (vi == 0) continue;
    bool others_ok = true;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i && of(e.elements[j]) == -vi) others_ok = false;
    if (others_ok) return true;
  }
  return false;
}

}  // namespace oracle
