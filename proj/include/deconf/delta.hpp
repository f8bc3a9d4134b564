#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "deconf/mask.hpp"

namespace deconf {

/// How each batch's |after - before| is scaled before it is summed.
enum class Normalization {
  kPerBatchMeanAbs,    // divide by the matrix's mean absolute update in that batch
  kPerBatchFrobenius,  // divide by the Frobenius norm of that batch's update
  kNone,
};

Normalization parse_normalization(const std::string& text);
std::string normalization_name(Normalization n);

/// Running sum of normalized absolute per-batch weight updates. finalize()
/// divides by the batch count to give the importance score of every entry.
class DeltaRecord {
 public:
  static constexpr double kEpsilon = 1e-12;

  explicit DeltaRecord(Normalization normalization = Normalization::kPerBatchMeanAbs)
      : normalization_(normalization) {}

  /// Adds normalize(|after - before|) to the accumulator of `id`.
  void accumulate(MatrixId id, const Tensor& before, const Tensor& after);
  /// Marks the end of one optimizer step.
  void end_batch();

  int batch_count() const { return batches_; }
  Normalization normalization() const { return normalization_; }
  bool finalized() const { return finalized_; }
  const std::map<MatrixId, Tensor>& sums() const { return sums_; }

  /// Sum / batch_count per matrix. Afterwards the record rejects updates.
  ImportanceMap finalize();

 private:
  Normalization normalization_;
  std::map<MatrixId, Tensor> sums_;
  int batches_ = 0;
  bool finalized_ = false;
};

/// Importance maps are written as array bundles (docs/formats.md), one
/// array per tracked matrix named by MatrixId::name().
void save_importance(const std::filesystem::path& path, const ImportanceMap& pi,
                     const nlohmann::json& meta = nlohmann::json::object());
ImportanceMap load_importance(const std::filesystem::path& path);

}  // namespace deconf
