#pragma once

#include <span>
#include <vector>

#include "deconf/model.hpp"

namespace deconf {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Decay applies only to parameters whose
/// `decay` flag is set; parameters outside the model's trainable set are
/// never touched.
class AdamW {
 public:
  AdamW(const EncoderModel& model, AdamWConfig config);

  /// `grads` is aligned with model.parameters(); entries of frozen
  /// parameters are ignored and may be empty.
  void step(EncoderModel& model, std::span<const Tensor> grads, double lr);
  int steps() const { return t_; }

 private:
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  int t_ = 0;
};

/// Linear warmup from 0 to `base_lr` over `warmup` steps, then linear decay
/// to 0 at `total` steps. `step` is 0-based.
double linear_schedule(int step, int warmup, int total, double base_lr);

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping. A non-positive `max_norm` disables clipping.
double clip_global_norm(std::span<Tensor> grads, double max_norm);

}  // namespace deconf
