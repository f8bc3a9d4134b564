#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "deconf/delta.hpp"
#include "deconf/model.hpp"
#include "deconf/shift.hpp"

namespace deconf {

enum class Target { kPrimary, kConfounder };
enum class StopMetric { kAuprc, kAccuracy };

struct TrainConfig {
  int epochs = 20;
  int patience = 5;
  double learning_rate = 1e-3;
  int warmup_steps = 50;
  int batch_size = 16;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; <= 0 disables.
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  Target target = Target::kPrimary;
  StopMetric metric = StopMetric::kAuprc;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double valid_metric = 0;
  double lr = 0;
  double wall_ms = 0;
};

struct TrainResult {
  EncoderModel best;
  int best_epoch = 0;
  double best_metric = 0;
  int epochs_run = 0;
  std::size_t steps = 0;
  std::vector<EpochRecord> history;
};

inline int label_of(const Example& e, Target t) { return t == Target::kPrimary ? e.y_p : e.y_c; }

/// Fine-tunes a copy of `init` (respecting its trainable set) and returns the
/// checkpoint with the best validation metric; earliest epoch wins ties.
/// When `tracker` is given it receives every tracked trainable matrix's
/// before/after pair after each batch, followed by end_batch().
TrainResult train(const EncoderModel& init, std::span<const Example> train_set,
                  std::span<const Example> valid_set, const TrainConfig& cfg,
                  DeltaRecord* tracker = nullptr);

/// Validation score used for early stopping.
double validation_metric(const EncoderModel& model, std::span<const Example> data, Target target,
                         StopMetric metric);

/// Trains a copy of `model` toward the confounder label on primary-negative
/// examples with only `trainable` unfrozen, and returns the finalized-ready
/// record of its weight updates. A stratified fifth of `data` is held out for
/// early stopping on confounder accuracy.
DeltaRecord train_confounder_phase(const EncoderModel& model, std::span<const Example> data,
                                   TrainConfig cfg, const TrainableSet& trainable,
                                   Normalization normalization = Normalization::kPerBatchMeanAbs,
                                   TrainResult* result = nullptr);

/// Columns: epoch,train_loss,valid_auprc,lr,wall_ms
void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace deconf
