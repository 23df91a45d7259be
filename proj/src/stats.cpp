#include "repprobe/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "repprobe/error.hpp"
#include "repprobe/rng.hpp"

namespace repprobe {

namespace {

constexpr double kStatEps = 1e-9;

void check_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw LengthMismatch(scores.size(), labels.size());
  for (int l : labels)
    if (l != 0 && l != 1) throw InvalidArgument("labels must be 0 or 1");
}

std::vector<double> scores_of(const std::vector<ScoredExample>& s) {
  std::vector<double> out;
  out.reserve(s.size());
  for (const auto& e : s) out.push_back(e.score);
  return out;
}

std::vector<int> labels_of(const std::vector<ScoredExample>& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& e : s) out.push_back(e.label);
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) throw ConstantInput();
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Centred cross-product of midranks; permutation-invariant normalisation
// means |S| orders permutations exactly like |rho|.
double centred_cross(std::span<const double> rx, std::span<const double> ry, double mean) {
  double s = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) s += (rx[i] - mean) * (ry[i] - mean);
  return s;
}

double spearman_exact_p(const std::vector<double>& rx, std::vector<double> ry) {
  const double mean = (static_cast<double>(rx.size()) + 1.0) / 2.0;
  const double observed = std::abs(centred_cross(rx, ry, mean));
  std::sort(ry.begin(), ry.end());
  // next_permutation visits each distinct arrangement once; every distinct
  // arrangement stands for the same number of raw permutations.
  std::uint64_t total = 0, extreme = 0;
  do {
    ++total;
    if (std::abs(centred_cross(rx, ry, mean)) >= observed - kStatEps) ++extreme;
  } while (std::next_permutation(ry.begin(), ry.end()));
  return static_cast<double>(extreme) / static_cast<double>(total);
}

double spearman_monte_carlo_p(const std::vector<double>& rx, std::vector<double> ry, std::uint64_t seed) {
  constexpr std::uint64_t kDraws = 100000;
  const double mean = (static_cast<double>(rx.size()) + 1.0) / 2.0;
  const double observed = std::abs(centred_cross(rx, ry, mean));
  Rng rng(seed);
  std::uint64_t extreme = 0;
  for (std::uint64_t d = 0; d < kDraws; ++d) {
    std::shuffle(ry.begin(), ry.end(), rng);
    if (std::abs(centred_cross(rx, ry, mean)) >= observed - kStatEps) ++extreme;
  }
  return static_cast<double>(extreme + 1) / static_cast<double>(kDraws + 1);
}

double spearman_t_p(double rho, std::size_t n) {
  if (std::abs(rho) >= 1.0) return 0.0;
  const double df = static_cast<double>(n) - 2.0;
  const double t = rho * std::sqrt(df / (1.0 - rho * rho));
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

struct RankSums {
  std::vector<double> ranks;
  double u = 0;
  double mean = 0;
};

RankSums rank_sums(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EmptyInput("Mann-Whitney U needs two non-empty samples");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  RankSums rs;
  rs.ranks = midranks(pooled);
  const double na = static_cast<double>(a.size());
  const double ra = std::accumulate(rs.ranks.begin(), rs.ranks.begin() + static_cast<std::ptrdiff_t>(a.size()), 0.0);
  rs.u = ra - na * (na + 1) / 2.0;
  rs.mean = na * static_cast<double>(b.size()) / 2.0;
  return rs;
}

}  // namespace

ScoredExample make_scored(const LabeledExample& example, double score) {
  return ScoredExample{example.id,        score,         example.label, example.entities(), example.evidence_ids.size(),
                       example.level, example.rating};
}

std::vector<double> midranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels);
  const auto ranks = midranks(scores);
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += ranks[i];
    }
  }
  const double neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw SingleClass();
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double auc(const std::vector<ScoredExample>& scored) {
  const auto s = scores_of(scored);
  const auto l = labels_of(scored);
  return auc(s, l);
}

double brier(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels);
  if (scores.empty()) throw EmptyInput("Brier score of no predictions");
  double sum = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) sum += (scores[i] - labels[i]) * (scores[i] - labels[i]);
  return sum / static_cast<double>(scores.size());
}

double brier(const std::vector<ScoredExample>& scored) {
  const auto s = scores_of(scored);
  const auto l = labels_of(scored);
  return brier(s, l);
}

PValueMethod spearman_method(std::size_t n) {
  if (n <= 10) return PValueMethod::Exact;
  if (n <= 20) return PValueMethod::MonteCarlo;
  return PValueMethod::TApproximation;
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y, std::uint64_t permutation_seed) {
  if (x.size() != y.size()) throw LengthMismatch(x.size(), y.size());
  if (x.size() < 3) throw InsufficientData("Spearman correlation needs at least 3 points");
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  CorrelationResult r;
  r.n = x.size();
  r.rho = pearson(rx, ry);
  switch (spearman_method(r.n)) {
    case PValueMethod::Exact: r.p_value = spearman_exact_p(rx, ry); break;
    case PValueMethod::MonteCarlo: r.p_value = spearman_monte_carlo_p(rx, ry, permutation_seed); break;
    case PValueMethod::TApproximation: r.p_value = spearman_t_p(r.rho, r.n); break;
  }
  return r;
}

MannWhitneyResult mann_whitney_exact(std::span<const double> a, std::span<const double> b) {
  const RankSums rs = rank_sums(a, b);
  const std::size_t n = rs.ranks.size();
  if (n > 24) throw InvalidArgument("exact Mann-Whitney enumeration limited to 24 observations");
  const double observed = std::abs(rs.u - rs.mean);
  const double offset = static_cast<double>(a.size()) * (static_cast<double>(a.size()) + 1) / 2.0;
  std::uint64_t total = 0, extreme = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != a.size()) continue;
    double ra = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) ra += rs.ranks[i];
    ++total;
    if (std::abs(ra - offset - rs.mean) >= observed - kStatEps) ++extreme;
  }
  return {rs.u, static_cast<double>(extreme) / static_cast<double>(total)};
}

MannWhitneyResult mann_whitney_normal(std::span<const double> a, std::span<const double> b) {
  const RankSums rs = rank_sums(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double n = na + nb;

  std::vector<double> sorted = rs.ranks;
  std::sort(sorted.begin(), sorted.end());
  double ties = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double var = na * nb / 12.0 * ((n + 1) - ties / (n * (n - 1)));
  if (var <= 0) return {rs.u, 1.0};
  const double z = std::max(0.0, std::abs(rs.u - rs.mean) - 0.5) / std::sqrt(var);
  return {rs.u, std::min(1.0, std::erfc(z / std::sqrt(2.0)))};
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  return a.size() + b.size() > 20 ? mann_whitney_normal(a, b) : mann_whitney_exact(a, b);
}

std::string_view to_string(FrequencyKey k) {
  return k == FrequencyKey::TruePairCountInTrain ? "true_pairs_in_train" : "evidence_items";
}

FrequencyTable true_pair_counts(const std::vector<LabeledExample>& train) {
  FrequencyTable table;
  for (const auto& ex : train) {
    for (const auto& e : ex.entities()) {
      auto& c = table[e];
      if (ex.label == kPositiveLabel) ++c;
    }
  }
  return table;
}

FrequencyTable evidence_item_counts(const KnowledgeBase& kb) {
  FrequencyTable table;
  for (const auto& [e, ids] : kb.index()) table[e] = ids.size();
  return table;
}

FrequencyAnalysis error_vs_frequency(const std::vector<ScoredExample>& scored, const FrequencyTable& frequency,
                                     EntityKind kind) {
  FrequencyAnalysis out;
  out.kind = kind;
  for (const auto& s : scored) {
    auto it = std::find_if(s.entity_refs.begin(), s.entity_refs.end(), [&](const Entity& e) { return e.kind() == kind; });
    if (it == s.entity_refs.end()) continue;
    auto f = frequency.find(*it);
    out.points.push_back({s.id, it->name(), f == frequency.end() ? 0 : f->second, s.label, s.error()});
  }
  auto correlate = [&](int label) -> std::optional<CorrelationResult> {
    std::vector<double> freq, err;
    for (const auto& p : out.points) {
      if (p.label != label) continue;
      freq.push_back(static_cast<double>(p.frequency));
      err.push_back(p.error);
    }
    if (freq.size() < 3) return std::nullopt;
    try {
      return spearman(freq, err);
    } catch (const ConstantInput&) {
      return std::nullopt;
    }
  };
  out.true_examples = correlate(1);
  out.false_examples = correlate(0);
  return out;
}

std::vector<Stratum> stratify_by_evidence(const std::vector<ScoredExample>& scored, StratifyBy by) {
  std::map<int, std::vector<ScoredExample>> groups;
  for (const auto& s : scored) groups[by == StratifyBy::Level ? static_cast<int>(s.level) : s.rating].push_back(s);
  std::vector<Stratum> out;
  for (const auto& [key, members] : groups) {
    Stratum st;
    st.key = by == StratifyBy::Level ? std::string(to_string(static_cast<EvidenceLevel>(key))) : std::to_string(key);
    st.n = members.size();
    const bool has_pos = std::any_of(members.begin(), members.end(), [](const auto& m) { return m.label == 1; });
    const bool has_neg = std::any_of(members.begin(), members.end(), [](const auto& m) { return m.label == 0; });
    if (has_pos && has_neg) {
      st.auc = auc(members);
      st.brier = brier(members);
    }
    out.push_back(std::move(st));
  }
  return out;
}

std::vector<AuditRow> audit_well_known(const std::map<std::string, std::vector<ScoredExample>>& by_model,
                                       const AuditCriteria& criteria) {
  std::map<std::string, AuditRow> rows;
  for (const auto& [model, scored] : by_model) {
    for (const auto& s : scored) {
      const bool level_ok = std::find(criteria.levels.begin(), criteria.levels.end(), s.level) != criteria.levels.end();
      const bool rating_ok = std::find(criteria.ratings.begin(), criteria.ratings.end(), s.rating) != criteria.ratings.end();
      if (!level_ok || !rating_ok) continue;
      auto [it, inserted] = rows.try_emplace(s.id);
      AuditRow& row = it->second;
      if (inserted) {
        row.id = s.id;
        row.entities = s.entity_refs;
        row.label = s.label;
        row.level = s.level;
        row.rating = s.rating;
      }
      row.error[model] = s.error();
      row.max_error = std::max(row.max_error, s.error());
    }
  }
  std::vector<AuditRow> out;
  out.reserve(rows.size());
  for (auto& [id, row] : rows) out.push_back(std::move(row));
  std::stable_sort(out.begin(), out.end(), [](const AuditRow& a, const AuditRow& b) {
    if (a.max_error != b.max_error) return a.max_error > b.max_error;
    return a.id < b.id;
  });
  return out;
}

}  // namespace repprobe
