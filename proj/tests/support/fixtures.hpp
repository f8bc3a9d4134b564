#pragma once

#include "deconf/corpus.hpp"
#include "deconf/harness.hpp"

namespace deconf::testing {

inline ModelConfig tiny_model() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.vocab_size = 40;
  c.max_seq_len = 12;
  return c;
}

inline CorpusSpec tiny_corpus(std::uint64_t seed = 0) {
  CorpusSpec s;
  s.vocab_size = 40;
  s.markers_per_set = 2;
  s.min_len = 4;
  s.max_len = 10;
  s.marker_rate_primary = 0.2;
  s.marker_rate_confounder = 0.2;
  s.pool_size_per_cell = 40;
  s.seed = seed;
  return s;
}

inline TrainConfig tiny_train(std::uint64_t seed = 0) {
  TrainConfig t;
  t.epochs = 3;
  t.patience = 2;
  t.batch_size = 8;
  t.warmup_steps = 4;
  t.seed = seed;
  return t;
}

inline ShiftConfig tiny_shift(double alpha, std::uint64_t seed = 0) {
  ShiftConfig s = ShiftConfig::reciprocal(alpha, seed);
  s.n_train = 48;
  s.n_valid = 16;
  s.n_test = 24;
  return s;
}

inline ExperimentPlan tiny_plan() {
  ExperimentPlan p;
  p.corpus = tiny_corpus();
  p.model = tiny_model();
  p.train = tiny_train();
  p.shift = tiny_shift(1.0);
  p.alphas = {3.0};
  p.seeds = {0, 1};
  p.df_k_grid = {0, 10, 50, 100};
  p.ecf_mask_pcts = {15};
  p.tradeoff_alpha = 3.0;
  return p;
}

}  // namespace deconf::testing
