#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "deconf/mask.hpp"

namespace deconf {

/// score is the predicted probability of y_p = 1. y_c = 1 is the "F" group,
/// y_c = 0 the "M" group.
struct ScoredExample {
  double score = 0;
  int y_p = 0;
  int y_c = 0;
};

/// Predictions are positive when the score strictly exceeds the threshold.
inline bool predicted_positive(double score, double threshold) { return score > threshold; }

/// Step-wise area under the precision-recall curve: sweep distinct scores in
/// descending order and sum recall increments times precision at each step.
double auprc(std::span<const double> scores, std::span<const int> labels);
double auprc(std::span<const ScoredExample> scored);

struct FprGap {
  double fpr_f = 0;
  double fpr_m = 0;
  double delta = 0;
};

/// False-positive rate per confounder group among y_p = 0 examples.
FprGap fpr_gap(std::span<const ScoredExample> scored, double threshold = 0.5);

struct SpGap {
  double rate_f = 0;
  double rate_m = 0;
  double delta = 0;
  /// Empty unless the input is not balanced over the four cells.
  std::string warning;
};

/// Positive-prediction rate gap between groups; expects a balanced test set.
SpGap sp_gap(std::span<const ScoredExample> scored, double threshold = 0.5);

struct MannWhitney {
  double u = 0;  // for sample_a
  double p_two_sided = 1;
  bool exact = false;
};

/// Rank-sum test with midranks. Exact permutation distribution when both
/// samples have at most 8 entries, otherwise the tie-corrected normal
/// approximation with continuity correction.
MannWhitney mann_whitney_u(std::span<const double> sample_a, std::span<const double> sample_b);

struct JaccardEntry {
  MatrixId matrix;
  double index = 0;
  /// Set when a binarization threshold fell inside a run of tied scores.
  bool degenerate = false;
};

/// Per matrix: binarize each map above its own `percentile`-th percentile
/// and return |U ∩ V| / |U ∪ V|.
std::vector<JaccardEntry> jaccard_entanglement(const ImportanceMap& pi_p, const ImportanceMap& pi_c,
                                               double percentile = 85.0);

struct MetricsReport {
  double auprc = 0;
  std::optional<double> auprc_f;
  std::optional<double> auprc_m;
  double fpr_f = 0;
  double fpr_m = 0;
  double delta_fpr = 0;
  double delta_sp = 0;
  std::array<std::size_t, 4> n_by_cell{};
  std::string warning;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// AUPRC on the full test split, FPR on its y_p = 0 part, SP on `balanced`.
MetricsReport evaluate_report(std::span<const ScoredExample> test,
                              std::span<const ScoredExample> balanced, double threshold = 0.5);

}  // namespace deconf
