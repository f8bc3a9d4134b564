#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deconf/metrics.hpp"
#include "deconf/training.hpp"

namespace deconf {

struct CvOptions {
  int folds = 5;
  int repeats = 3;
  /// Down-sample every (y_p, y_c) cell to the smallest cell, afresh for each
  /// repeat.
  bool balanced = false;
  /// When > 0, each repeat draws this many examples per cell without
  /// replacement instead. Repeats then see mostly different examples, so
  /// their fold scores are closer to independent.
  std::size_t per_cell = 0;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
};

struct CvGroupGap {
  double gap = 0;      // |mean AUPRC_F - mean AUPRC_M|
  double p_value = 1;  // two-sided Mann-Whitney over the per-fold scores
  std::vector<double> auprc_f;
  std::vector<double> auprc_m;
};

/// Repeated stratified k-fold: trains one model per fold, scores the held-out
/// fold separately for each confounder group and compares the groups.
CvGroupGap cv_group_gap(std::span<const Example> pool, const CvOptions& options);

/// Folds are stratified over the four (y_p, y_c) cells. Returns the fold id
/// of every example.
std::vector<int> stratified_folds(std::span<const Example> data, int folds, std::uint64_t seed);

}  // namespace deconf
