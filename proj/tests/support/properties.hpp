#pragma once

// Randomized property checks shared by the unit tests and the acceptance
// runner. Each returns an empty string on success or a description of the
// first violation.

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "deconf/mask.hpp"
#include "deconf/metrics.hpp"
#include "deconf/shift.hpp"
#include "support/oracles.hpp"

namespace deconf::testing {

/// Random importance map over a few small matrices. Scores come from a
/// coarse grid half the time so ties are exercised.
inline ImportanceMap random_importance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_layers(1, 3), side(1, 6), coin(0, 1), level(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool coarse = coin(rng) == 1;
  ImportanceMap pi;
  auto fill = [&](MatrixId id) {
    Tensor t(side(rng), side(rng));
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = coarse ? level(rng) : u(rng);
    pi.emplace(id, std::move(t));
  };
  fill(MatrixId::emb());
  const int layers = n_layers(rng);
  for (int l = 1; l <= layers; ++l) {
    for (MatrixKind k : block_kinds()) {
      if (coin(rng)) fill(MatrixId::block(l, k));
    }
  }
  return pi;
}

/// Same matrices and shapes as `shape`, fresh values.
inline ImportanceMap random_like(std::mt19937_64& rng, const ImportanceMap& shape) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImportanceMap out;
  for (const auto& [id, t] : shape) {
    Tensor v(t.rows(), t.cols());
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = u(rng) < 0.3 ? std::floor(u(rng) * 4) : u(rng);
    out.emplace(id, v);
  }
  return out;
}

inline std::string check_mask_identities(std::mt19937_64& rng) {
  std::ostringstream err;
  const ImportanceMap dp = random_importance(rng);
  const ImportanceMap dc = random_like(rng, dp);
  const std::size_t n = universe_size(dp);
  std::uniform_real_distribution<double> kdist(0.0, 100.0);
  const double k1 = std::floor(kdist(rng)), k2 = std::floor(kdist(rng));
  const double lo = std::min(k1, k2), hi = std::max(k1, k2);

  const DualMasks m = dual_filter_masks(dp, dc, hi);
  const WeightMask top_c(topk_set(dc, hi), n);
  if (!(mask_union(m.intersection, m.difference) == top_c)) err << "M_I u M_D != topk(dc) at k=" << hi << "; ";
  if (!mask_intersection(m.intersection, m.difference).empty()) err << "M_I n M_D not empty; ";
  if (!(m.combined == top_c)) err << "combined mask differs from topk(dc); ";
  const auto expected = static_cast<std::size_t>(std::floor(hi / 100.0 * n + 1e-9));
  if (top_c.size() != expected) err << "|topk| " << top_c.size() << " != " << expected << "; ";

  // nesting
  const WeightMask small(topk_set(dc, lo), n);
  if (!(mask_intersection(small, top_c) == small)) err << "topk not nested for k " << lo << " <= " << hi << "; ";

  // per-matrix threshold fraction
  std::vector<MatrixId> ids;
  for (const auto& [id, t] : dp) ids.push_back(id);
  const double pct = std::floor(kdist(rng));
  const WeightMask per_matrix = threshold_mask_per_matrix(dp, ids, pct);
  for (const auto& [id, t] : dp) {
    const double target = pct / 100.0 * static_cast<double>(t.size());
    if (std::abs(static_cast<double>(per_matrix.count_in(id)) - target) > 1.0) {
      err << "per-matrix count off target for " << id.name() << "; ";
    }
  }

  // positive rescaling leaves every selection unchanged
  std::uniform_real_distribution<double> sdist(0.1, 10.0);
  ImportanceMap scaled = dp;
  for (auto& [id, t] : scaled) t *= sdist(rng);
  if (!(threshold_mask_per_matrix(scaled, ids, pct) == per_matrix)) err << "per-matrix mask not scale invariant; ";
  ImportanceMap scaled_c = dc;
  const double s = sdist(rng);
  for (auto& [id, t] : scaled_c) t *= s;
  if (!(dual_filter_masks(dp, scaled_c, hi).intersection == m.intersection)) err << "DF not scale invariant; ";

  // endpoints
  for (double k : {0.0, 100.0}) {
    const DualMasks e = dual_filter_masks(dp, dc, k);
    if (!e.difference.empty()) err << "|M_D| != 0 at k=" << k << "; ";
    if (e.combined.size() != (k == 0 ? 0 : n)) err << "|M_union| wrong at k=" << k << "; ";
  }
  return err.str();
}

inline std::string check_mask_size_relation(std::mt19937_64& rng) {
  std::ostringstream err;
  const ImportanceMap dp = random_importance(rng);
  const ImportanceMap dc = random_like(rng, dp);
  const std::size_t n = universe_size(dp);
  const RankedImportance rp(dp), rc(dc);
  for (int k = 0; k <= 100; ++k) {
    const DualMasks m = dual_filter_masks(rp, rc, k);
    const auto expected = static_cast<std::size_t>(std::floor(k / 100.0 * static_cast<double>(n) + 1e-9));
    if (mask_union(m.intersection, m.difference).size() != expected) {
      err << "|M_I u M_D| != floor(k/100 * " << n << ") at k=" << k << "; ";
    }
    if ((k == 0 || k == 100) && !m.difference.empty()) err << "|M_D| != 0 at k=" << k << "; ";
  }
  return err.str();
}

inline std::string check_sampler(double alpha, std::size_t n, const Dataset& pool, std::uint64_t seed) {
  std::ostringstream err;
  const Conditionals c = conditionals_from_alpha(alpha, 0.5, 0.5);
  if (std::abs(c.p1 / c.p0 - alpha) > 1e-12) err << "alpha round trip " << c.p1 / c.p0 << " vs " << alpha << "; ";
  if (std::abs(0.5 * c.p1 + 0.5 * c.p0 - 0.5) > 1e-12) err << "marginal P(y_p=1) not preserved; ";
  ShiftConfig cfg;
  const auto targets = largest_remainder_counts(joint_from_alpha(alpha, 0.5, 0.5), n);
  const Split split = sample_split(pool, n, alpha, cfg, seed);
  if (cell_counts(split.examples) != targets) err << "cell counts differ from targets (alpha " << alpha << ", n " << n << "); ";
  if (split.examples.size() != n) err << "split size " << split.examples.size() << " != " << n << "; ";
  for (std::size_t i = 0; i < split.examples.size(); ++i) {
    if (!(pool[split.draws[i]] == split.examples[i])) {
      err << "draw index does not point at the sampled example; ";
      break;
    }
  }
  return err.str();
}

inline std::string check_metric_oracles(std::mt19937_64& rng) {
  std::ostringstream err;
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  std::uniform_int_distribution<int> size(4, 30);
  std::vector<ScoredExample> xs;
  // every group needs y_p = 0 examples and both labels overall
  do {
    xs = random_scored(rng, static_cast<std::size_t>(size(rng)));
  } while ([&] {
    int neg[2] = {0, 0}, pos = 0;
    for (const auto& x : xs) {
      if (x.y_p == 0) ++neg[x.y_c];
      pos += x.y_p;
    }
    return neg[0] == 0 || neg[1] == 0 || pos == 0;
  }());
  const double threshold = std::uniform_int_distribution<int>(0, 7)(rng) / 7.0;

  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& x : xs) {
    scores.push_back(x.score);
    labels.push_back(x.y_p);
  }
  if (!near(auprc(scores, labels), auprc_by_thresholds(scores, labels))) err << "auprc mismatch; ";

  const FprGap fpr = fpr_gap(xs, threshold);
  const GroupRates fo = fpr_by_count(xs, threshold);
  if (!near(fpr.fpr_f, fo.f) || !near(fpr.fpr_m, fo.m) || !near(fpr.delta, std::abs(fo.f - fo.m))) {
    err << "fpr mismatch; ";
  }
  const SpGap sp = sp_gap(xs, threshold);
  const GroupRates so = positive_rate_by_count(xs, threshold);
  if (!near(sp.rate_f, so.f) || !near(sp.rate_m, so.m) || !near(sp.delta, std::abs(so.f - so.m))) {
    err << "sp mismatch; ";
  }

  // Jaccard on one random pair of matrices
  const Index rows = std::uniform_int_distribution<int>(1, 6)(rng), cols = std::uniform_int_distribution<int>(1, 6)(rng);
  Tensor a(rows, cols), b(rows, cols);
  std::uniform_int_distribution<int> lvl(0, 4);
  for (Index i = 0; i < a.size(); ++i) {
    a.data()[i] = lvl(rng);
    b.data()[i] = lvl(rng);
  }
  const double pct = std::uniform_int_distribution<int>(0, 100)(rng);
  const auto entries = jaccard_entanglement({{MatrixId::cls(), a}}, {{MatrixId::cls(), b}}, pct);
  const double jo = jaccard_by_sets(std::vector<double>(a.data(), a.data() + a.size()),
                                    std::vector<double>(b.data(), b.data() + b.size()), pct);
  if (entries.size() != 1 || !near(entries[0].index, jo)) err << "jaccard mismatch; ";

  // Mann-Whitney on small samples (exact regime)
  std::uniform_int_distribution<int> n_small(1, 8);
  std::vector<double> s1(static_cast<std::size_t>(n_small(rng))), s2(static_cast<std::size_t>(n_small(rng)));
  for (double& v : s1) v = lvl(rng);
  for (double& v : s2) v = lvl(rng);
  const MannWhitney mw = mann_whitney_u(s1, s2);
  if (!mw.exact || !near(mw.u, u_by_pairs(s1, s2)) || !near(mw.p_two_sided, mwu_p_by_enumeration(s1, s2))) {
    err << "mann-whitney mismatch; ";
  }
  return err.str();
}

}  // namespace deconf::testing
