#include "deconf/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace deconf {

AdamW::AdamW(const EncoderModel& model, AdamWConfig config) : config_(config) {
  for (const auto& p : model.parameters()) {
    m_.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
  }
}

void AdamW::step(EncoderModel& model, std::span<const Tensor> grads, double lr) {
  auto& params = model.parameters();
  if (grads.size() != params.size()) throw ValidationError("AdamW: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, t_);
  const double bc2 = 1.0 - std::pow(config_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!model.is_trainable(p)) continue;
    const Tensor& g = grads[i];
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
      throw ValidationError("AdamW: gradient shape mismatch for " + p.name);
    }
    if (p.decay && config_.weight_decay != 0.0) p.value *= 1.0 - lr * config_.weight_decay;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + config_.eps);
  }
}

double linear_schedule(int step, int warmup, int total, double base_lr) {
  if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step + 1) / warmup;
  const int decay_steps = total - warmup;
  if (decay_steps <= 0) return base_lr;
  const double frac = static_cast<double>(total - step) / decay_steps;
  return base_lr * std::clamp(frac, 0.0, 1.0);
}

double clip_global_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

}  // namespace deconf
