#include "deconf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace deconf {

namespace {

std::optional<double> try_auprc(std::span<const ScoredExample> scored) {
  bool pos = false, neg = false;
  for (const auto& s : scored) (s.y_p ? pos : neg) = true;
  if (!pos || !neg) return std::nullopt;
  return auprc(scored);
}

std::vector<ScoredExample> group(std::span<const ScoredExample> scored, int y_c) {
  std::vector<ScoredExample> out;
  for (const auto& s : scored) {
    if (s.y_c == y_c) out.push_back(s);
  }
  return out;
}

std::vector<double> midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double auprc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionError("auprc: score/label count mismatch");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ValidationError("auprc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("auprc: labels must be binary");
    positives += static_cast<std::size_t>(labels[i]);
  }
  if (positives == 0 || positives == scores.size()) {
    throw UndefinedMetricError("auprc: needs at least one positive and one negative example");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t group_pos = 0, j = i;
    for (; j < order.size() && scores[order[j]] == scores[order[i]]; ++j) {
      if (labels[order[j]]) {
        ++group_pos;
      } else {
        ++fp;
      }
    }
    tp += group_pos;
    if (group_pos > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      area += static_cast<double>(group_pos) / static_cast<double>(positives) * precision;
    }
    i = j;
  }
  return area;
}

double auprc(std::span<const ScoredExample> scored) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : scored) {
    scores.push_back(s.score);
    labels.push_back(s.y_p);
  }
  return auprc(scores, labels);
}

FprGap fpr_gap(std::span<const ScoredExample> scored, double threshold) {
  std::array<std::size_t, 2> negatives{}, false_pos{};
  for (const auto& s : scored) {
    if (s.y_p != 0) continue;
    ++negatives[s.y_c];
    if (predicted_positive(s.score, threshold)) ++false_pos[s.y_c];
  }
  if (negatives[1] == 0) throw UndefinedMetricError("fpr_gap: group F has no y_p = 0 examples");
  if (negatives[0] == 0) throw UndefinedMetricError("fpr_gap: group M has no y_p = 0 examples");
  FprGap out;
  out.fpr_f = static_cast<double>(false_pos[1]) / static_cast<double>(negatives[1]);
  out.fpr_m = static_cast<double>(false_pos[0]) / static_cast<double>(negatives[0]);
  out.delta = std::abs(out.fpr_f - out.fpr_m);
  return out;
}

SpGap sp_gap(std::span<const ScoredExample> scored, double threshold) {
  std::array<std::size_t, 2> total{}, positive{};
  std::array<std::size_t, 4> cells{};
  for (const auto& s : scored) {
    ++total[s.y_c];
    ++cells[static_cast<std::size_t>(2 * s.y_p + s.y_c)];
    if (predicted_positive(s.score, threshold)) ++positive[s.y_c];
  }
  if (total[1] == 0) throw UndefinedMetricError("sp_gap: group F is empty");
  if (total[0] == 0) throw UndefinedMetricError("sp_gap: group M is empty");
  SpGap out;
  out.rate_f = static_cast<double>(positive[1]) / static_cast<double>(total[1]);
  out.rate_m = static_cast<double>(positive[0]) / static_cast<double>(total[0]);
  out.delta = std::abs(out.rate_f - out.rate_m);
  const auto [lo, hi] = std::minmax_element(cells.begin(), cells.end());
  if (*hi - *lo > 1) {
    out.warning = "sp_gap: test set is not balanced over (y_p, y_c) cells";
  }
  return out;
}

MannWhitney mann_whitney_u(std::span<const double> sample_a, std::span<const double> sample_b) {
  if (sample_a.empty() || sample_b.empty()) throw ValidationError("mann_whitney_u: empty sample");
  const std::size_t na = sample_a.size(), nb = sample_b.size(), n = na + nb;
  std::vector<double> pooled(sample_a.begin(), sample_a.end());
  pooled.insert(pooled.end(), sample_b.begin(), sample_b.end());
  const std::vector<double> ranks = midranks(pooled);
  const double rank_sum_a = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(na), 0.0);
  const double offset = static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;
  MannWhitney out;
  out.u = rank_sum_a - offset;
  const double mean = static_cast<double>(na) * static_cast<double>(nb) / 2.0;
  const double observed = std::abs(out.u - mean);

  if (na <= 8 && nb <= 8) {
    // every assignment of na of the pooled midranks to sample a
    out.exact = true;
    std::vector<bool> chosen(n, false);
    std::fill(chosen.begin(), chosen.begin() + static_cast<std::ptrdiff_t>(na), true);
    std::size_t total = 0, extreme = 0;
    do {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i]) s += ranks[i];
      }
      ++total;
      if (std::abs(s - offset - mean) >= observed - 1e-9) ++extreme;
    } while (std::prev_permutation(chosen.begin(), chosen.end()));
    out.p_two_sided = static_cast<double>(extreme) / static_cast<double>(total);
    return out;
  }

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double nn = static_cast<double>(n);
  const double var = static_cast<double>(na) * static_cast<double>(nb) / 12.0 *
                     ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var <= 0) {
    out.p_two_sided = 1.0;
    return out;
  }
  const double z = std::max(0.0, observed - 0.5) / std::sqrt(var);
  out.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

std::vector<JaccardEntry> jaccard_entanglement(const ImportanceMap& pi_p, const ImportanceMap& pi_c,
                                               double percentile) {
  if (pi_p.size() != pi_c.size()) throw ValidationError("jaccard: maps cover different matrices");
  const double keep_pct = 100.0 - percentile;
  std::vector<JaccardEntry> out;
  for (const auto& [id, a] : pi_p) {
    const auto it = pi_c.find(id);
    if (it == pi_c.end()) throw ValidationError("jaccard: second map lacks " + id.name());
    const Tensor& b = it->second;
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw ValidationError("jaccard: shape mismatch for " + id.name());
    }
    const auto n = static_cast<std::size_t>(a.size());
    const std::size_t count = selection_count(keep_pct, n);
    JaccardEntry entry{id, 1.0, false};
    auto support = [&](const Tensor& m) {
      std::vector<Index> top = top_entries(m, count);
      if (count > 0 && count < n) {
        // the cut is degenerate when the first excluded entry ties the last kept
        const std::vector<Index> next = top_entries(m, count + 1);
        if (m.data()[next[count]] == m.data()[top.back()]) entry.degenerate = true;
      }
      std::sort(top.begin(), top.end());
      return top;
    };
    const auto u = support(a);
    const auto v = support(b);
    std::vector<Index> inter, uni;
    std::set_intersection(u.begin(), u.end(), v.begin(), v.end(), std::back_inserter(inter));
    std::set_union(u.begin(), u.end(), v.begin(), v.end(), std::back_inserter(uni));
    if (uni.empty()) {
      entry.degenerate = true;
    } else {
      entry.index = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    }
    out.push_back(entry);
  }
  return out;
}

MetricsReport evaluate_report(std::span<const ScoredExample> test,
                              std::span<const ScoredExample> balanced, double threshold) {
  MetricsReport r;
  r.auprc = auprc(test);
  r.auprc_f = try_auprc(group(test, 1));
  r.auprc_m = try_auprc(group(test, 0));
  const FprGap fpr = fpr_gap(test, threshold);
  r.fpr_f = fpr.fpr_f;
  r.fpr_m = fpr.fpr_m;
  r.delta_fpr = fpr.delta;
  const SpGap sp = sp_gap(balanced, threshold);
  r.delta_sp = sp.delta;
  r.warning = sp.warning;
  for (const auto& s : test) ++r.n_by_cell[static_cast<std::size_t>(2 * s.y_p + s.y_c)];
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::json j = {{"auprc", auprc},
                      {"auprc_by_group", {{"F", opt(auprc_f)}, {"M", opt(auprc_m)}}},
                      {"fpr_by_group", {{"F", fpr_f}, {"M", fpr_m}}},
                      {"delta_fpr", delta_fpr},
                      {"delta_sp", delta_sp},
                      {"n_by_cell",
                       {{"yp0_yc0", n_by_cell[0]}, {"yp0_yc1", n_by_cell[1]},
                        {"yp1_yc0", n_by_cell[2]}, {"yp1_yc1", n_by_cell[3]}}}};
  if (!warning.empty()) j["warning"] = warning;
  return j;
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  auto opt = [](const std::optional<double>& v) {
    std::ostringstream s;
    if (v) {
      s << std::fixed << std::setprecision(4) << *v;
    } else {
      s << "n/a";
    }
    return s.str();
  };
  out << std::left << std::fixed << std::setprecision(4);
  out << std::setw(16) << "auprc" << auprc << '\n';
  out << std::setw(16) << "auprc_F" << opt(auprc_f) << '\n';
  out << std::setw(16) << "auprc_M" << opt(auprc_m) << '\n';
  out << std::setw(16) << "fpr_F" << fpr_f << '\n';
  out << std::setw(16) << "fpr_M" << fpr_m << '\n';
  out << std::setw(16) << "delta_fpr" << delta_fpr << '\n';
  out << std::setw(16) << "delta_sp" << delta_sp << '\n';
  out << std::setw(16) << "n(yp,yc)" << n_by_cell[0] << ' ' << n_by_cell[1] << ' ' << n_by_cell[2]
      << ' ' << n_by_cell[3] << '\n';
  if (!warning.empty()) out << "warning: " << warning << '\n';
  return out.str();
}

}  // namespace deconf
