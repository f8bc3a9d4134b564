#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "deconf/autodiff.hpp"
#include "deconf/ops.hpp"

namespace deconf {

class WeightMask;

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int vocab_size = 1024;
  int max_seq_len = 64;
  int n_classes = 2;
  double dropout = 0.1;
  double init_std = 0.02;

  void validate() const;
};

/// Layer designators. Encoder blocks are numbered 1..n_layers; the two
/// sentinels sort before and after them.
inline constexpr int kEmbLayer = 0;
inline constexpr int kClsLayer = std::numeric_limits<int>::max();

enum class MatrixKind { kEmb, kQuery, kKey, kValue, kOutput, kFfn1, kFfn2, kCls };

/// Identifies one of the tracked weight matrices. Ordering is (layer, kind),
/// i.e. embedding first, then blocks bottom-up, classifier last.
struct MatrixId {
  int layer = kEmbLayer;
  MatrixKind kind = MatrixKind::kEmb;

  static MatrixId emb() { return {kEmbLayer, MatrixKind::kEmb}; }
  static MatrixId cls() { return {kClsLayer, MatrixKind::kCls}; }
  static MatrixId block(int layer, MatrixKind kind);

  bool is_valid(int n_layers) const;
  std::string name() const;
  static MatrixId parse(const std::string& name);

  auto operator<=>(const MatrixId&) const = default;
};

std::string kind_name(MatrixKind kind);

/// The six per-block tracked kinds, in canonical order.
std::span<const MatrixKind> block_kinds();

using TrainableSet = std::set<int>;

/// Accepts "cls", "emb", "layerN" (or "LN").
int parse_designator(const std::string& text, int n_layers);
std::string designator_name(int designator);
TrainableSet all_designators(int n_layers);

struct Parameter {
  std::string name;
  int designator = kEmbLayer;
  std::optional<MatrixId> tracked;
  bool decay = false;
  Tensor value;
};

/// Packed token batch: sequences concatenated row-wise.
struct Batch {
  std::vector<int> ids;
  std::vector<int> positions;
  Segments segments;

  static Batch pack(std::span<const std::vector<int>> sequences);
};

class EncoderModel {
 public:
  EncoderModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& parameter(const std::string& name);
  const Parameter& parameter(const std::string& name) const;

  Tensor& matrix(MatrixId id);
  const Tensor& matrix(MatrixId id) const;
  /// All tracked ids valid under the config, in MatrixId order.
  std::vector<MatrixId> tracked_ids() const;

  void set_trainable(const TrainableSet& designators);
  const TrainableSet& trainable() const { return trainable_; }
  bool is_trainable(const Parameter& p) const { return trainable_.contains(p.designator); }

  /// Logits (1 x 2) for a single sequence.
  Tensor forward(std::span<const int> token_ids, bool train_mode = false,
                 std::uint64_t dropout_seed = 0) const;
  /// Logits (B x 2) for a batch, without recording gradients.
  Tensor forward_batch(std::span<const std::vector<int>> sequences) const;
  /// Positive-class probabilities for each sequence.
  std::vector<double> predict_proba(std::span<const std::vector<int>> sequences,
                                    std::size_t chunk = 64) const;

  /// Builds the logits graph on `tape`. When `param_vars` is non-null it
  /// receives one Var per parameter (same order as parameters()); trainable
  /// parameters are recorded as differentiable leaves, the rest as constants.
  Var build_logits(Tape& tape, const Batch& batch, bool train_mode, std::uint64_t dropout_seed,
                   std::vector<Var>* param_vars) const;

  /// Bitwise equality of configs and parameter values.
  bool same_parameters(const EncoderModel& other) const;

 private:
  void add_param(std::string name, int designator, std::optional<MatrixId> tracked, bool decay,
                 Tensor value);

  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
  TrainableSet trainable_;
};

/// Returns a copy of `model` with every masked coordinate set to zero.
EncoderModel apply_mask(const EncoderModel& model, const WeightMask& mask);

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the checkpoint serialization, hex encoded.
std::string checkpoint_hash(const EncoderModel& model);

}  // namespace deconf
