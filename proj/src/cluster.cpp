#include "repprobe/cluster.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace repprobe {

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

ClusterAssignment number_by_appearance(const std::vector<std::size_t>& root_of) {
  std::map<std::size_t, int> label;
  ClusterAssignment out;
  out.cluster.reserve(root_of.size());
  for (auto r : root_of) {
    auto [it, fresh] = label.try_emplace(r, static_cast<int>(label.size()));
    out.cluster.push_back(it->second);
  }
  return out;
}

}  // namespace

Linkage hac_ward_impl(const Eigen::MatrixXd& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw InsufficientData("Ward linkage needs at least 2 points");

  // Squared Ward distances; for singletons the squared Euclidean distance.
  Eigen::MatrixXd d2(x.rows(), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    d2(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) d2(i, j) = d2(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }

  std::vector<std::size_t> id(n), size(n, 1), nn(n);
  std::vector<double> nn_d2(n);
  std::vector<bool> active(n, true);
  std::iota(id.begin(), id.end(), 0);

  auto rescan = [&](std::size_t s) {
    nn_d2[s] = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (t == s || !active[t]) continue;
      const double d = d2(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
      if (d < nn_d2[s] || (d == nn_d2[s] && id[t] < id[nn[s]])) {
        nn_d2[s] = d;
        nn[s] = t;
      }
    }
  };
  for (std::size_t s = 0; s < n; ++s) rescan(s);

  Linkage steps;
  steps.reserve(n - 1);
  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t best = n;
    auto key = [&](std::size_t s) {
      return std::tuple(nn_d2[s], std::min(id[s], id[nn[s]]), std::max(id[s], id[nn[s]]));
    };
    for (std::size_t s = 0; s < n; ++s)
      if (active[s] && (best == n || key(s) < key(best))) best = s;

    const std::size_t a = best, b = nn[best];
    steps.push_back({std::min(id[a], id[b]), std::max(id[a], id[b]), std::sqrt(std::max(0.0, nn_d2[a])),
                     size[a] + size[b]});

    const std::size_t keep = std::min(a, b), drop = std::max(a, b);
    const auto ea = static_cast<Eigen::Index>(a), eb = static_cast<Eigen::Index>(b);
    const double na = static_cast<double>(size[a]), nb = static_cast<double>(size[b]);
    const double dab = d2(ea, eb);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a || k == b) continue;
      const auto ek = static_cast<Eigen::Index>(k);
      const double nk = static_cast<double>(size[k]);
      const double d = ((na + nk) * d2(ea, ek) + (nb + nk) * d2(eb, ek) - nk * dab) / (na + nb + nk);
      d2(static_cast<Eigen::Index>(keep), ek) = d2(ek, static_cast<Eigen::Index>(keep)) = std::max(0.0, d);
    }
    active[drop] = false;
    size[keep] += size[drop];
    id[keep] = n + step;

    if (step + 2 == n) break;
    rescan(keep);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == keep) continue;
      if (nn[k] == a || nn[k] == b) {
        rescan(k);
        continue;
      }
      const double d = d2(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(keep));
      if (d < nn_d2[k] || (d == nn_d2[k] && id[keep] < id[nn[k]])) {
        nn_d2[k] = d;
        nn[k] = keep;
      }
    }
  }
  return steps;
}

Linkage hac_ward(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InsufficientData("Ward linkage needs at least 2 points");
  const std::size_t d = rows.front().size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d)
      throw DimensionMismatch("row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                              " values, expected " + std::to_string(d));
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return hac_ward(x);
}

int ClusterAssignment::n_clusters() const {
  int top = -1;
  for (int c : cluster) top = std::max(top, c);
  return top + 1;
}

std::size_t ClusterAssignment::noise() const {
  return static_cast<std::size_t>(std::count(cluster.begin(), cluster.end(), -1));
}

ClusterAssignment cut_dendrogram(const Linkage& steps, const DendrogramCut& cut) {
  if (cut.threshold.has_value() == cut.n_clusters.has_value())
    throw InvalidThreshold("give exactly one of threshold and n_clusters");
  const std::size_t n = steps.size() + 1;
  std::size_t applied = 0;
  if (cut.threshold) {
    if (std::isnan(*cut.threshold)) throw InvalidThreshold("threshold is NaN");
  } else {
    if (*cut.n_clusters < 1 || static_cast<std::size_t>(*cut.n_clusters) > n)
      throw InvalidThreshold("n_clusters must lie in [1, " + std::to_string(n) + "]");
    applied = n - static_cast<std::size_t>(*cut.n_clusters);
  }

  DisjointSet sets(2 * n - 1);
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto& s = steps[k];
    if (s.merged_a >= n + k || s.merged_b >= n + k || s.merged_a == s.merged_b)
      throw InvalidArgument("linkage step " + std::to_string(k) + " refers to an unknown cluster");
    const bool keep = cut.threshold ? s.distance < *cut.threshold : k < applied;
    if (!keep) continue;
    sets.unite(s.merged_a, n + k);
    sets.unite(s.merged_b, n + k);
  }
  std::vector<std::size_t> root(n);
  for (std::size_t i = 0; i < n; ++i) root[i] = sets.find(i);
  return number_by_appearance(root);
}

ClusterAssignment density_cluster(const Eigen::MatrixXd& points, int min_cluster_size) {
  if (min_cluster_size < 2) throw InvalidArgument("min_cluster_size must be >= 2");
  if (!points.allFinite()) throw NonFinite("density_cluster input");
  const auto n = static_cast<std::size_t>(points.rows());
  const auto mcs = static_cast<std::size_t>(min_cluster_size);
  ClusterAssignment out;
  out.cluster.assign(n, -1);
  if (n < mcs || n < 2) return out;

  auto dist = [&](std::size_t i, std::size_t j) {
    return (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
  };

  // Core distance: distance to the min_samples-th nearest point, the point itself included.
  const std::size_t k = std::min(mcs, n) - 1;
  std::vector<double> core(n), row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = dist(i, j);
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end());
    core[i] = row[k];
  }

  // Prim's minimum spanning tree over mutual reachability distances.
  struct Edge {
    std::size_t u, v;
    double w;
  };
  std::vector<Edge> mst;
  mst.reserve(n - 1);
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::size_t cur = 0;
  in_tree[0] = true;
  for (std::size_t it = 1; it < n; ++it) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double mr = std::max({core[cur], core[j], dist(cur, j)});
      if (mr < best[j]) {
        best[j] = mr;
        from[j] = cur;
      }
      if (next == n || best[j] < best[next]) next = j;
    }
    mst.push_back({from[next], next, best[next]});
    in_tree[next] = true;
    cur = next;
  }
  std::stable_sort(mst.begin(), mst.end(), [](const Edge& a, const Edge& b) { return a.w < b.w; });

  // Single-linkage tree: node n + k is created by the k-th lightest edge.
  const std::size_t nodes = 2 * n - 1;
  std::vector<std::size_t> left(nodes, 0), right(nodes, 0), node_size(nodes, 1);
  std::vector<double> height(nodes, 0.0);
  {
    DisjointSet sets(nodes);
    std::vector<std::size_t> top(nodes);
    std::iota(top.begin(), top.end(), 0);
    for (std::size_t e = 0; e < mst.size(); ++e) {
      const std::size_t ra = sets.find(mst[e].u), rb = sets.find(mst[e].v);
      const std::size_t node = n + e;
      left[node] = top[ra];
      right[node] = top[rb];
      height[node] = mst[e].w;
      node_size[node] = node_size[left[node]] + node_size[right[node]];
      sets.unite(ra, rb);
      top[sets.find(ra)] = node;
    }
  }

  // Zero distances (duplicate points) get a finite density above every real one.
  double min_positive = std::numeric_limits<double>::infinity();
  for (const auto& e : mst)
    if (e.w > 0) min_positive = std::min(min_positive, e.w);
  const double max_lambda = std::isfinite(min_positive) ? 2.0 / min_positive : 1.0;
  auto lambda_of = [&](double h) { return h > 0 ? 1.0 / h : max_lambda; };

  // Condensed tree.
  std::vector<int> cluster_parent{-1};
  std::vector<double> birth{0.0}, stability{0.0};
  std::vector<int> leaf_cluster(n, 0);
  std::vector<std::size_t> label_of(nodes, 0);

  auto drop_points = [&](std::size_t node, int c, double lambda) {
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      const std::size_t m = stack.back();
      stack.pop_back();
      if (m < n) {
        leaf_cluster[m] = c;
        stability[static_cast<std::size_t>(c)] += lambda - birth[static_cast<std::size_t>(c)];
      } else {
        stack.push_back(left[m]);
        stack.push_back(right[m]);
      }
    }
  };

  std::deque<std::size_t> queue{nodes - 1};
  label_of[nodes - 1] = 0;
  while (!queue.empty()) {
    const std::size_t node = queue.front();
    queue.pop_front();
    const int c = static_cast<int>(label_of[node]);
    const double lambda = lambda_of(height[node]);
    const std::size_t l = left[node], r = right[node];
    const bool big_l = node_size[l] >= mcs, big_r = node_size[r] >= mcs;
    if (big_l && big_r) {
      for (std::size_t child : {l, r}) {
        label_of[child] = cluster_parent.size();
        cluster_parent.push_back(c);
        birth.push_back(lambda);
        stability.push_back(0.0);
        stability[static_cast<std::size_t>(c)] +=
            (lambda - birth[static_cast<std::size_t>(c)]) * static_cast<double>(node_size[child]);
        queue.push_back(child);
      }
    } else {
      for (std::size_t child : {l, r}) {
        if (node_size[child] >= mcs) {
          label_of[child] = static_cast<std::size_t>(c);
          queue.push_back(child);
        } else {
          drop_points(child, c, lambda);
        }
      }
    }
  }

  // Excess of mass, the root excluded.
  const std::size_t m = cluster_parent.size();
  std::vector<bool> selected(m, false);
  std::vector<double> subtree(stability);
  std::vector<std::vector<std::size_t>> children(m);
  for (std::size_t c = 1; c < m; ++c) children[static_cast<std::size_t>(cluster_parent[c])].push_back(c);
  for (std::size_t c = m; c-- > 1;) {
    double child_sum = 0;
    for (auto ch : children[c]) child_sum += subtree[ch];
    if (!children[c].empty() && child_sum > stability[c]) {
      subtree[c] = child_sum;
    } else {
      selected[c] = true;
      std::vector<std::size_t> stack(children[c]);
      while (!stack.empty()) {
        const auto d = stack.back();
        stack.pop_back();
        selected[d] = false;
        stack.insert(stack.end(), children[d].begin(), children[d].end());
      }
    }
  }
  if (m == 1) {
    out.cluster.assign(n, 0);
    return out;
  }

  std::vector<int> final_label(m, -1);
  int next_label = 0;
  for (std::size_t c = 1; c < m; ++c)
    if (selected[c]) final_label[c] = next_label++;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = leaf_cluster[i]; c > 0; c = cluster_parent[static_cast<std::size_t>(c)]) {
      if (selected[static_cast<std::size_t>(c)]) {
        out.cluster[i] = final_label[static_cast<std::size_t>(c)];
        break;
      }
    }
  }
  return out;
}

HomogeneityReport homogeneity(const ClusterAssignment& assignment, const std::vector<std::string>& labels) {
  if (labels.size() != assignment.size()) throw LengthMismatch(assignment.size(), labels.size());
  std::map<int, std::map<std::string, std::size_t>> counts;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (assignment.cluster[i] >= 0) ++counts[assignment.cluster[i]][labels[i]];

  HomogeneityReport report;
  double sum = 0;
  for (const auto& [c, by_label] : counts) {
    ClusterHomogeneity h;
    h.cluster = c;
    std::size_t top = 0;
    for (const auto& [label, count] : by_label) {
      h.size += count;
      if (count > top) {
        top = count;
        h.top_label = label;
      }
    }
    h.value = static_cast<double>(top) / static_cast<double>(h.size);
    sum += h.value;
    report.clusters.push_back(std::move(h));
  }
  if (!report.clusters.empty()) report.mean = sum / static_cast<double>(report.clusters.size());
  return report;
}

Projection pca_project2d(const std::vector<std::string>& ids, const Eigen::MatrixXd& x) {
  if (ids.size() != static_cast<std::size_t>(x.rows())) throw LengthMismatch(ids.size(), static_cast<std::size_t>(x.rows()));
  if (x.rows() < 3) throw InsufficientData("projection needs at least 3 points");
  if (!x.allFinite()) throw NonFinite("projection input");

  const Eigen::MatrixXd centred = x.rowwise() - x.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double tol = (s.size() ? s(0) : 0.0) * static_cast<double>(std::max(x.rows(), x.cols())) *
                     std::numeric_limits<double>::epsilon();

  Projection p;
  Eigen::MatrixXd coords = Eigen::MatrixXd::Zero(x.rows(), 2);
  for (Eigen::Index c = 0; c < 2; ++c) {
    if (c >= s.size() || s(c) <= tol) {
      p.degenerate = true;
      continue;
    }
    Eigen::VectorXd v = svd.matrixV().col(c);
    Eigen::Index at = 0;
    v.cwiseAbs().maxCoeff(&at);
    if (v(at) < 0) v = -v;
    coords.col(c) = centred * v;
  }
  for (std::size_t i = 0; i < ids.size(); ++i)
    p.points.push_back({ids[i], coords(static_cast<Eigen::Index>(i), 0), coords(static_cast<Eigen::Index>(i), 1)});
  return p;
}

std::vector<ProjectedPoint> load_external_projection(std::istream& source, const std::set<std::string>& known) {
  std::vector<ProjectedPoint> points;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  auto number = [&](const std::string& field, const char* what) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
      throw FormatError(lineno, std::string("non-numeric ") + what + " '" + field + "'");
    if (!std::isfinite(v)) throw FormatError(lineno, std::string("non-finite ") + what);
    return v;
  };
  while (std::getline(source, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1 && line.rfind("id\t", 0) == 0) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    if (fields.size() != 3) throw FormatError(lineno, "expected id<TAB>x<TAB>y");
    if (fields[0].empty()) throw FormatError(lineno, "empty id");
    ProjectedPoint p{fields[0], number(fields[1], "x"), number(fields[2], "y")};
    if (!known.contains(p.id)) throw UnknownId(p.id);
    if (!seen.insert(p.id).second) throw FormatError(lineno, "duplicate id '" + p.id + "'");
    points.push_back(std::move(p));
  }
  return points;
}

Eigen::MatrixXd projection_matrix(const std::vector<ProjectedPoint>& points) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = points[i].x;
    m(static_cast<Eigen::Index>(i), 1) = points[i].y;
  }
  return m;
}

void write_linkage_tsv(const Linkage& steps, std::ostream& sink) {
  sink << "step\tmerged_a\tmerged_b\tdistance\tnew_size\n" << std::setprecision(12);
  for (std::size_t k = 0; k < steps.size(); ++k)
    sink << k << '\t' << steps[k].merged_a << '\t' << steps[k].merged_b << '\t' << steps[k].distance << '\t'
         << steps[k].new_size << '\n';
}

void write_clusters_tsv(const std::vector<std::string>& ids, const ClusterAssignment& assignment,
                        const std::vector<std::string>& labels, std::ostream& sink) {
  if (ids.size() != assignment.size()) throw LengthMismatch(ids.size(), assignment.size());
  if (labels.size() != assignment.size()) throw LengthMismatch(labels.size(), assignment.size());
  sink << "id\tcluster\tlabel\n";
  for (std::size_t i = 0; i < ids.size(); ++i) sink << ids[i] << '\t' << assignment.cluster[i] << '\t' << labels[i] << '\n';
}

void write_homogeneity_tsv(const HomogeneityReport& report, std::ostream& sink) {
  sink << "cluster\tsize\ttop_label\thomogeneity\n" << std::setprecision(10);
  std::size_t total = 0;
  for (const auto& h : report.clusters) {
    sink << h.cluster << '\t' << h.size << '\t' << h.top_label << '\t' << h.value << '\n';
    total += h.size;
  }
  if (report.mean) sink << "mean\t" << total << "\t-\t" << *report.mean << '\n';
}

}  // namespace repprobe
