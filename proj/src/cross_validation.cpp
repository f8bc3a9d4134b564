#include "deconf/cross_validation.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace deconf {

namespace {

std::uint64_t fold_seed(std::uint64_t seed, int repeat, int fold) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(repeat), static_cast<std::uint32_t>(fold)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Dataset downsample_balanced(std::span<const Example> pool, std::size_t per_cell, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 4> cells;
  for (std::size_t i = 0; i < pool.size(); ++i) cells[cell_index(pool[i].y_p, pool[i].y_c)].push_back(i);
  std::size_t smallest = pool.size();
  for (const auto& c : cells) smallest = std::min(smallest, c.size());
  if (per_cell > smallest) throw DataError("cross validation: a cell has fewer examples than per_cell");
  if (per_cell > 0) smallest = per_cell;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (auto& c : cells) {
    std::shuffle(c.begin(), c.end(), rng);
    keep.insert(keep.end(), c.begin(), c.begin() + static_cast<std::ptrdiff_t>(smallest));
  }
  std::sort(keep.begin(), keep.end());
  Dataset out;
  for (std::size_t i : keep) out.push_back(pool[i]);
  return out;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<int> stratified_folds(std::span<const Example> data, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross validation: need at least two folds");
  std::array<std::vector<std::size_t>, 4> cells;
  for (std::size_t i = 0; i < data.size(); ++i) cells[cell_index(data[i].y_p, data[i].y_c)].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<int> fold_of(data.size(), 0);
  int next = 0;
  for (auto& c : cells) {
    std::shuffle(c.begin(), c.end(), rng);
    for (std::size_t i : c) {
      fold_of[i] = next;
      next = (next + 1) % folds;
    }
  }
  return fold_of;
}

CvGroupGap cv_group_gap(std::span<const Example> pool, const CvOptions& options) {
  if (options.repeats < 1) throw ValidationError("cross validation: need at least one repeat");
  std::array<std::size_t, 4> counts = cell_counts(pool);
  if (counts[0] + counts[2] == 0 || counts[1] + counts[3] == 0) {
    throw DataError("cross validation: pool needs both confounder groups");
  }
  if (counts[0] + counts[1] == 0 || counts[2] + counts[3] == 0) {
    throw DataError("cross validation: pool needs both primary labels");
  }
  const bool resample = options.balanced || options.per_cell > 0;
  const Dataset whole = resample ? Dataset{} : Dataset(pool.begin(), pool.end());
  CvGroupGap out;
  for (int r = 0; r < options.repeats; ++r) {
    const Dataset data =
        resample ? downsample_balanced(pool, options.per_cell, fold_seed(options.seed, r, -2)) : whole;
    const std::vector<int> fold_of = stratified_folds(data, options.folds, fold_seed(options.seed, r, -1));
    for (int f = 0; f < options.folds; ++f) {
      Dataset fit, valid, test;
      std::size_t rest = 0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (fold_of[i] == f) {
          test.push_back(data[i]);
        } else {
          (rest++ % 5 == 4 ? valid : fit).push_back(data[i]);
        }
      }
      const std::uint64_t seed = fold_seed(options.seed, r, f);
      TrainConfig tc = options.train;
      tc.seed = seed;
      const TrainResult trained = train(EncoderModel(options.model, seed), fit, valid, tc);
      std::vector<std::vector<int>> seqs;
      for (const auto& e : test) seqs.push_back(e.token_ids);
      const std::vector<double> probs = trained.best.predict_proba(seqs);
      for (int g = 0; g <= 1; ++g) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < test.size(); ++i) {
          if (test[i].y_c != g) continue;
          s.push_back(probs[i]);
          y.push_back(test[i].y_p);
        }
        (g == 1 ? out.auprc_f : out.auprc_m).push_back(auprc(s, y));
      }
    }
  }
  out.gap = std::abs(mean(out.auprc_f) - mean(out.auprc_m));
  out.p_value = mann_whitney_u(out.auprc_f, out.auprc_m).p_two_sided;
  return out;
}

}  // namespace deconf
