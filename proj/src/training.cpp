#include "deconf/training.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

#include "deconf/metrics.hpp"
#include "deconf/optimizer.hpp"

namespace deconf {

namespace {

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL * (step + 1));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require_dataset(std::span<const Example> data, const char* what) {
  if (data.empty()) throw ValidationError(std::string(what) + " dataset is empty");
  for (const auto& e : data) validate_example(e);
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs <= 0) throw ValidationError("train config: epochs must be positive");
  if (patience <= 0 || patience >= epochs) throw ValidationError("train config: need 0 < patience < epochs");
  if (warmup_steps < 0) throw ValidationError("train config: warmup_steps must be non-negative");
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw ValidationError("train config: learning_rate must be finite and non-negative");
  }
  if (batch_size <= 0) throw ValidationError("train config: batch_size must be positive");
}

double validation_metric(const EncoderModel& model, std::span<const Example> data, Target target,
                         StopMetric metric) {
  std::vector<std::vector<int>> seqs;
  std::vector<int> labels;
  for (const auto& e : data) {
    seqs.push_back(e.token_ids);
    labels.push_back(label_of(e, target));
  }
  const std::vector<double> probs = model.predict_proba(seqs);
  if (metric == StopMetric::kAuprc) return auprc(probs, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    correct += static_cast<std::size_t>((predicted_positive(probs[i], 0.5) ? 1 : 0) == labels[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

TrainResult train(const EncoderModel& init, std::span<const Example> train_set,
                  std::span<const Example> valid_set, const TrainConfig& cfg, DeltaRecord* tracker) {
  cfg.validate();
  require_dataset(train_set, "training");
  require_dataset(valid_set, "validation");

  EncoderModel model = init;
  AdamW optimizer(model, AdamWConfig{.weight_decay = cfg.weight_decay});
  const auto n = train_set.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const int total_steps = static_cast<int>(batches_per_epoch) * cfg.epochs;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(cfg.seed);

  std::vector<std::size_t> tracked;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const Parameter& p = model.parameters()[i];
    if (p.tracked && model.is_trainable(p)) tracked.push_back(i);
  }

  TrainResult result{init, 0, -std::numeric_limits<double>::infinity(), 0, 0, {}};
  std::size_t step = 0;
  std::vector<Tensor> before(tracked.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    double lr = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch, ++step) {
      const std::size_t b1 = std::min(n, b0 + batch);
      std::vector<std::vector<int>> seqs;
      std::vector<int> labels;
      for (std::size_t i = b0; i < b1; ++i) {
        seqs.push_back(train_set[order[i]].token_ids);
        labels.push_back(label_of(train_set[order[i]], cfg.target));
      }
      const Batch packed = Batch::pack(seqs);
      std::vector<Tensor> grads(model.parameters().size());
      double loss_value = 0;
      try {
        Tape tape;
        std::vector<Var> vars;
        Var logits = model.build_logits(tape, packed, true, step_seed(cfg.seed, step), &vars);
        Var loss = cross_entropy_logits(logits, labels);
        loss_value = loss.value()(0, 0);
        tape.backward(loss);
        for (std::size_t i = 0; i < vars.size(); ++i) {
          if (model.is_trainable(model.parameters()[i])) grads[i] = vars[i].grad();
        }
      } catch (const ValidationError& e) {
        throw TrainingDivergedError(step, e.what());
      }
      if (!std::isfinite(loss_value)) throw TrainingDivergedError(step, "non-finite loss");
      clip_global_norm(std::span<Tensor>(grads), cfg.grad_clip);
      for (const auto& g : grads) {
        if (g.size() > 0 && !g.allFinite()) throw TrainingDivergedError(step, "non-finite gradient");
      }
      lr = linear_schedule(static_cast<int>(step), cfg.warmup_steps, total_steps, cfg.learning_rate);
      if (tracker) {
        for (std::size_t t = 0; t < tracked.size(); ++t) before[t] = model.parameters()[tracked[t]].value;
      }
      optimizer.step(model, grads, lr);
      if (tracker) {
        for (std::size_t t = 0; t < tracked.size(); ++t) {
          const Parameter& p = model.parameters()[tracked[t]];
          tracker->accumulate(*p.tracked, before[t], p.value);
        }
        tracker->end_batch();
      }
      loss_sum += loss_value * static_cast<double>(b1 - b0);
    }
    const double metric = validation_metric(model, valid_set, cfg.target, cfg.metric);
    const auto t1 = std::chrono::steady_clock::now();
    result.history.push_back({epoch, loss_sum / static_cast<double>(n), metric, lr,
                              std::chrono::duration<double, std::milli>(t1 - t0).count()});
    result.epochs_run = epoch;
    if (metric > result.best_metric) {
      result.best_metric = metric;
      result.best_epoch = epoch;
      result.best = model;
    } else if (epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }
  result.steps = step;
  return result;
}

DeltaRecord train_confounder_phase(const EncoderModel& model, std::span<const Example> data,
                                   TrainConfig cfg, const TrainableSet& trainable,
                                   Normalization normalization, TrainResult* result) {
  require_dataset(data, "confounder-phase");
  for (const auto& e : data) {
    if (e.y_p != 0) {
      throw ValidationError("confounder phase: example " + e.source_id +
                            " has y_p = 1; filter to y_p = 0 first");
    }
  }
  // stratified hold-out of every fifth example per confounder group
  std::array<std::vector<std::size_t>, 2> groups;
  for (std::size_t i = 0; i < data.size(); ++i) groups[data[i].y_c].push_back(i);
  std::mt19937_64 rng(cfg.seed ^ 0xc0f0u);
  Dataset fit, hold;
  for (auto& g : groups) {
    std::shuffle(g.begin(), g.end(), rng);
    for (std::size_t k = 0; k < g.size(); ++k) (k % 5 == 4 ? hold : fit).push_back(data[g[k]]);
  }
  if (fit.empty() || hold.empty()) throw DataError("confounder phase: too few examples to hold out");

  EncoderModel copy = model;
  copy.set_trainable(trainable);
  cfg.target = Target::kConfounder;
  cfg.metric = StopMetric::kAccuracy;
  DeltaRecord record(normalization);
  TrainResult r = train(copy, fit, hold, cfg, &record);
  if (result) *result = std::move(r);
  return record;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_loss,valid_auprc,lr,wall_ms\n";
  out << std::setprecision(10);
  for (const auto& h : history) {
    out << h.epoch << ',' << h.train_loss << ',' << h.valid_metric << ',' << h.lr << ','
        << std::fixed << std::setprecision(1) << h.wall_ms << std::defaultfloat
        << std::setprecision(10) << '\n';
  }
}

}  // namespace deconf
