#include "deconf/model.hpp"

#include <array>
#include <cstring>
#include <random>
#include <sstream>

#include "deconf/array_io.hpp"
#include "deconf/mask.hpp"

namespace deconf {

namespace {

constexpr std::array<MatrixKind, 6> kBlockKinds = {MatrixKind::kQuery, MatrixKind::kKey,
                                                   MatrixKind::kValue, MatrixKind::kOutput,
                                                   MatrixKind::kFfn1,  MatrixKind::kFfn2};

std::uint64_t mix_seed(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string layer_prefix(int designator) { return designator_name(designator) + "."; }

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},     {"n_heads", c.n_heads},         {"d_model", c.d_model},
          {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
          {"n_classes", c.n_classes},   {"dropout", c.dropout},         {"init_std", c.init_std}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers");
  c.n_heads = j.at("n_heads");
  c.d_model = j.at("d_model");
  c.d_ff = j.at("d_ff");
  c.vocab_size = j.at("vocab_size");
  c.max_seq_len = j.at("max_seq_len");
  c.n_classes = j.at("n_classes");
  c.dropout = j.at("dropout");
  c.init_std = j.at("init_std");
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_ff <= 0 || vocab_size <= 0 ||
      max_seq_len <= 0) {
    throw ValidationError("model config: sizes must be positive");
  }
  if (d_model % n_heads != 0) throw ValidationError("model config: d_model not divisible by n_heads");
  if (n_classes != 2) throw ValidationError("model config: only binary classification is supported");
  if (dropout < 0 || dropout >= 1) throw ValidationError("model config: dropout must lie in [0, 1)");
}

std::span<const MatrixKind> block_kinds() { return kBlockKinds; }

std::string kind_name(MatrixKind kind) {
  switch (kind) {
    case MatrixKind::kEmb: return "W_emb";
    case MatrixKind::kQuery: return "W_Q";
    case MatrixKind::kKey: return "W_K";
    case MatrixKind::kValue: return "W_V";
    case MatrixKind::kOutput: return "W_O";
    case MatrixKind::kFfn1: return "W_1";
    case MatrixKind::kFfn2: return "W_2";
    case MatrixKind::kCls: return "W_cls";
  }
  return "?";
}

MatrixId MatrixId::block(int layer, MatrixKind kind) {
  MatrixId id{layer, kind};
  if (layer < 1 || layer == kClsLayer || kind == MatrixKind::kEmb || kind == MatrixKind::kCls) {
    throw ValidationError("invalid block matrix " + id.name());
  }
  return id;
}

bool MatrixId::is_valid(int n_layers) const {
  if (layer == kEmbLayer) return kind == MatrixKind::kEmb;
  if (layer == kClsLayer) return kind == MatrixKind::kCls;
  return layer >= 1 && layer <= n_layers && kind != MatrixKind::kEmb && kind != MatrixKind::kCls;
}

std::string MatrixId::name() const { return designator_name(layer) + "." + kind_name(kind); }

MatrixId MatrixId::parse(const std::string& name) {
  const auto dot = name.find('.');
  if (dot == std::string::npos) throw ValidationError("bad matrix name '" + name + "'");
  const int layer = parse_designator(name.substr(0, dot), std::numeric_limits<int>::max() - 1);
  const std::string kind = name.substr(dot + 1);
  for (MatrixKind k : {MatrixKind::kEmb, MatrixKind::kQuery, MatrixKind::kKey, MatrixKind::kValue,
                       MatrixKind::kOutput, MatrixKind::kFfn1, MatrixKind::kFfn2, MatrixKind::kCls}) {
    if (kind_name(k) == kind) {
      MatrixId id{layer, k};
      if (!id.is_valid(std::numeric_limits<int>::max() - 1)) {
        throw ValidationError("bad matrix name '" + name + "'");
      }
      return id;
    }
  }
  throw ValidationError("bad matrix kind in '" + name + "'");
}

int parse_designator(const std::string& text, int n_layers) {
  if (text == "cls") return kClsLayer;
  if (text == "emb") return kEmbLayer;
  std::string digits;
  if (text.rfind("layer", 0) == 0) {
    digits = text.substr(5);
  } else if (text.size() > 1 && text[0] == 'L') {
    digits = text.substr(1);
  }
  if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos &&
      digits.size() < 9) {
    const int layer = std::stoi(digits);
    if (layer >= 1 && layer <= n_layers) return layer;
  }
  throw ValidationError("unknown layer designator '" + text + "'");
}

std::string designator_name(int designator) {
  if (designator == kEmbLayer) return "emb";
  if (designator == kClsLayer) return "cls";
  return "layer" + std::to_string(designator);
}

TrainableSet all_designators(int n_layers) {
  TrainableSet s{kEmbLayer, kClsLayer};
  for (int i = 1; i <= n_layers; ++i) s.insert(i);
  return s;
}

Batch Batch::pack(std::span<const std::vector<int>> sequences) {
  Batch b;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw ValidationError("batch: empty token sequence");
    for (std::size_t i = 0; i < seq.size(); ++i) {
      b.ids.push_back(seq[i]);
      b.positions.push_back(static_cast<int>(i));
    }
    b.segments.push(static_cast<Index>(seq.size()));
  }
  return b;
}

EncoderModel::EncoderModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config_.init_std);
  auto randn = [&](Index r, Index c) {
    Tensor t(r, c);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng);
    return t;
  };
  const Index d = config_.d_model, ff = config_.d_ff;
  auto zeros = [](Index n) { return Tensor::Zero(1, n); };
  auto ones = [](Index n) { return Tensor::Ones(1, n); };

  add_param("emb.W_emb", kEmbLayer, MatrixId::emb(), true, randn(config_.vocab_size, d));
  add_param("emb.pos", kEmbLayer, std::nullopt, true, randn(config_.max_seq_len, d));
  add_param("emb.ln_gain", kEmbLayer, std::nullopt, false, ones(d));
  add_param("emb.ln_bias", kEmbLayer, std::nullopt, false, zeros(d));
  for (int l = 1; l <= config_.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    for (MatrixKind k : {MatrixKind::kQuery, MatrixKind::kKey, MatrixKind::kValue, MatrixKind::kOutput}) {
      const std::string suffix = kind_name(k).substr(2);
      add_param(p + kind_name(k), l, MatrixId{l, k}, true, randn(d, d));
      add_param(p + "b_" + suffix, l, std::nullopt, false, zeros(d));
    }
    add_param(p + "ln1_gain", l, std::nullopt, false, ones(d));
    add_param(p + "ln1_bias", l, std::nullopt, false, zeros(d));
    add_param(p + "W_1", l, MatrixId{l, MatrixKind::kFfn1}, true, randn(d, ff));
    add_param(p + "b_1", l, std::nullopt, false, zeros(ff));
    add_param(p + "W_2", l, MatrixId{l, MatrixKind::kFfn2}, true, randn(ff, d));
    add_param(p + "b_2", l, std::nullopt, false, zeros(d));
    add_param(p + "ln2_gain", l, std::nullopt, false, ones(d));
    add_param(p + "ln2_bias", l, std::nullopt, false, zeros(d));
  }
  add_param("cls.W_cls", kClsLayer, MatrixId::cls(), true, randn(d, config_.n_classes));
  add_param("cls.b_cls", kClsLayer, std::nullopt, false, zeros(config_.n_classes));
  trainable_ = all_designators(config_.n_layers);
}

void EncoderModel::add_param(std::string name, int designator, std::optional<MatrixId> tracked,
                             bool decay, Tensor value) {
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), designator, tracked, decay, std::move(value)});
}

Parameter& EncoderModel::parameter(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("no parameter named '" + name + "'");
  return params_[it->second];
}

const Parameter& EncoderModel::parameter(const std::string& name) const {
  return const_cast<EncoderModel*>(this)->parameter(name);
}

Tensor& EncoderModel::matrix(MatrixId id) {
  if (!id.is_valid(config_.n_layers)) throw ValidationError("invalid tracked matrix " + id.name());
  return parameter(id.name()).value;
}

const Tensor& EncoderModel::matrix(MatrixId id) const {
  return const_cast<EncoderModel*>(this)->matrix(id);
}

std::vector<MatrixId> EncoderModel::tracked_ids() const {
  std::vector<MatrixId> ids{MatrixId::emb()};
  for (int l = 1; l <= config_.n_layers; ++l) {
    for (MatrixKind k : kBlockKinds) ids.push_back(MatrixId{l, k});
  }
  ids.push_back(MatrixId::cls());
  return ids;
}

void EncoderModel::set_trainable(const TrainableSet& designators) {
  for (int d : designators) {
    if (d != kEmbLayer && d != kClsLayer && (d < 1 || d > config_.n_layers)) {
      throw ValidationError("unknown layer designator " + std::to_string(d));
    }
  }
  trainable_ = designators;
}

Var EncoderModel::build_logits(Tape& tape, const Batch& batch, bool train_mode,
                               std::uint64_t dropout_seed, std::vector<Var>* param_vars) const {
  for (int pos : batch.positions) {
    if (pos >= config_.max_seq_len) {
      throw ValidationError("sequence longer than max_seq_len " + std::to_string(config_.max_seq_len));
    }
  }
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) {
    vars.push_back(param_vars && is_trainable(p) ? tape.parameter(p.value) : tape.constant(p.value));
  }
  auto get = [&](const std::string& name) { return vars[index_.at(name)]; };
  const double rate = train_mode ? config_.dropout : 0.0;
  std::uint64_t site = 0;
  auto drop = [&](Var x) { return dropout(x, rate, mix_seed(dropout_seed ^ mix_seed(++site))); };

  Var x = add(embedding(get("emb.W_emb"), batch.ids), embedding(get("emb.pos"), batch.positions));
  x = drop(layer_norm(x, get("emb.ln_gain"), get("emb.ln_bias")));
  for (int l = 1; l <= config_.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    Var q = add_row(matmul(x, get(p + "W_Q")), get(p + "b_Q"));
    Var k = add_row(matmul(x, get(p + "W_K")), get(p + "b_K"));
    Var v = add_row(matmul(x, get(p + "W_V")), get(p + "b_V"));
    Var a = attention(q, k, v, batch.segments, config_.n_heads);
    Var o = drop(add_row(matmul(a, get(p + "W_O")), get(p + "b_O")));
    x = layer_norm(add(x, o), get(p + "ln1_gain"), get(p + "ln1_bias"));
    Var h = gelu(add_row(matmul(x, get(p + "W_1")), get(p + "b_1")));
    Var f = drop(add_row(matmul(h, get(p + "W_2")), get(p + "b_2")));
    x = layer_norm(add(x, f), get(p + "ln2_gain"), get(p + "ln2_bias"));
  }
  Var pooled = mean_pool(x, batch.segments);
  Var logits = add_row(matmul(pooled, get("cls.W_cls")), get("cls.b_cls"));
  if (param_vars) *param_vars = std::move(vars);
  return logits;
}

Tensor EncoderModel::forward(std::span<const int> token_ids, bool train_mode,
                             std::uint64_t dropout_seed) const {
  const std::vector<std::vector<int>> one{std::vector<int>(token_ids.begin(), token_ids.end())};
  const Batch batch = Batch::pack(one);
  Tape tape;
  return build_logits(tape, batch, train_mode, dropout_seed, nullptr).value();
}

Tensor EncoderModel::forward_batch(std::span<const std::vector<int>> sequences) const {
  const Batch batch = Batch::pack(sequences);
  Tape tape;
  return build_logits(tape, batch, false, 0, nullptr).value();
}

std::vector<double> EncoderModel::predict_proba(std::span<const std::vector<int>> sequences,
                                                std::size_t chunk) const {
  std::vector<double> out;
  out.reserve(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); i += chunk) {
    const auto part = sequences.subspan(i, std::min(chunk, sequences.size() - i));
    const Tensor probs = deconf::softmax_rows(forward_batch(part));
    for (Index r = 0; r < probs.rows(); ++r) out.push_back(probs(r, 1));
  }
  return out;
}

bool EncoderModel::same_parameters(const EncoderModel& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& a = params_[i].value;
    const Tensor& b = other.params_[i].value;
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

EncoderModel apply_mask(const EncoderModel& model, const WeightMask& mask) {
  EncoderModel out = model;
  const int n_layers = model.config().n_layers;
  for (const Coordinate& c : mask) {
    if (!c.matrix.is_valid(n_layers)) {
      throw ValidationError("mask addresses unknown matrix " + c.matrix.name());
    }
    Tensor& m = out.matrix(c.matrix);
    if (c.flat < 0 || c.flat >= m.size()) {
      throw ValidationError("mask coordinate " + std::to_string(c.flat) + " out of range for " +
                            c.matrix.name());
    }
    m.data()[c.flat] = 0.0;
  }
  return out;
}

namespace {

ArrayBundle to_bundle(const EncoderModel& model) {
  ArrayBundle bundle;
  bundle.meta["kind"] = "checkpoint";
  bundle.meta["config"] = config_to_json(model.config());
  bundle.meta["seed"] = model.seed();
  std::vector<std::string> trainable;
  for (int d : model.trainable()) trainable.push_back(designator_name(d));
  bundle.meta["trainable"] = trainable;
  for (const auto& p : model.parameters()) bundle.arrays.push_back({p.name, p.value});
  return bundle;
}

}  // namespace

void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path) {
  write_bundle(path, to_bundle(model));
}

EncoderModel load_checkpoint(const std::filesystem::path& path) {
  const ArrayBundle bundle = read_bundle(path);
  if (bundle.meta.value("kind", "") != "checkpoint") throw DataError(path.string() + " is not a checkpoint");
  const ModelConfig config = config_from_json(bundle.meta.at("config"));
  EncoderModel model(config, bundle.meta.at("seed").get<std::uint64_t>());
  for (auto& p : model.parameters()) {
    const Tensor& v = bundle.at(p.name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw DataError("checkpoint: shape mismatch for " + p.name);
    }
    p.value = v;
  }
  TrainableSet trainable;
  for (const auto& name : bundle.meta.at("trainable")) {
    trainable.insert(parse_designator(name.get<std::string>(), config.n_layers));
  }
  model.set_trainable(trainable);
  return model;
}

std::string checkpoint_hash(const EncoderModel& model) {
  std::ostringstream out(std::ios::binary);
  write_bundle(out, to_bundle(model));
  return sha256_hex(out.str());
}

}  // namespace deconf
