#include "deconf/delta.hpp"

#include "deconf/array_io.hpp"

namespace deconf {

Normalization parse_normalization(const std::string& text) {
  if (text == "mean-abs" || text == "per-batch-mean-abs") return Normalization::kPerBatchMeanAbs;
  if (text == "frobenius" || text == "per-batch-frobenius") return Normalization::kPerBatchFrobenius;
  if (text == "none") return Normalization::kNone;
  throw ValidationError("unknown normalization '" + text + "'");
}

std::string normalization_name(Normalization n) {
  switch (n) {
    case Normalization::kPerBatchMeanAbs: return "per-batch-mean-abs";
    case Normalization::kPerBatchFrobenius: return "per-batch-frobenius";
    case Normalization::kNone: return "none";
  }
  return "?";
}

void DeltaRecord::accumulate(MatrixId id, const Tensor& before, const Tensor& after) {
  if (finalized_) throw ValidationError("delta record: already finalized");
  if (before.rows() != after.rows() || before.cols() != after.cols()) {
    throw ValidationError("delta record: before/after shape mismatch for " + id.name());
  }
  auto [it, inserted] = sums_.try_emplace(id);
  if (inserted) {
    it->second = Tensor::Zero(before.rows(), before.cols());
  } else if (it->second.rows() != before.rows() || it->second.cols() != before.cols()) {
    throw ValidationError("delta record: shape of " + id.name() + " changed between batches");
  }
  Tensor update = (after - before).cwiseAbs();
  switch (normalization_) {
    case Normalization::kPerBatchMeanAbs:
      update /= std::max(update.mean(), kEpsilon);
      break;
    case Normalization::kPerBatchFrobenius:
      update /= std::max(update.norm(), kEpsilon);
      break;
    case Normalization::kNone:
      break;
  }
  it->second += update;
}

void DeltaRecord::end_batch() {
  if (finalized_) throw ValidationError("delta record: already finalized");
  ++batches_;
}

ImportanceMap DeltaRecord::finalize() {
  if (batches_ == 0) throw EmptyRecordError("delta record: no batches recorded");
  finalized_ = true;
  ImportanceMap out;
  for (const auto& [id, sum] : sums_) out.emplace(id, sum / static_cast<double>(batches_));
  return out;
}

void save_importance(const std::filesystem::path& path, const ImportanceMap& pi,
                     const nlohmann::json& meta) {
  ArrayBundle bundle;
  bundle.meta = meta;
  bundle.meta["kind"] = "importance";
  for (const auto& [id, t] : pi) bundle.arrays.push_back({id.name(), t});
  write_bundle(path, bundle);
}

ImportanceMap load_importance(const std::filesystem::path& path) {
  const ArrayBundle bundle = read_bundle(path);
  if (bundle.meta.value("kind", "") != "importance") {
    throw DataError(path.string() + " is not an importance map");
  }
  ImportanceMap pi;
  for (const auto& a : bundle.arrays) pi.emplace(MatrixId::parse(a.name), a.value);
  return pi;
}

}  // namespace deconf
