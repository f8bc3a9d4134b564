#include "deconf/shift.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "deconf/errors.hpp"

namespace deconf {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::string cell_name(std::size_t cell) {
  return "(y_p=" + std::to_string(cell / 2) + ", y_c=" + std::to_string(cell % 2) + ")";
}

std::array<std::vector<std::size_t>, 4> cells_of(std::span<const Example> pool) {
  std::array<std::vector<std::size_t>, 4> cells;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    validate_example(pool[i]);
    cells[cell_index(pool[i].y_p, pool[i].y_c)].push_back(i);
  }
  return cells;
}

}  // namespace

void validate_example(const Example& e) {
  if ((e.y_p != 0 && e.y_p != 1) || (e.y_c != 0 && e.y_c != 1)) {
    throw ValidationError("example " + e.source_id + ": labels must be binary");
  }
  if (e.token_ids.empty()) throw ValidationError("example " + e.source_id + ": empty token sequence");
}

ShiftConfig ShiftConfig::reciprocal(double alpha_train, std::uint64_t seed) {
  ShiftConfig cfg;
  cfg.alpha_train = alpha_train;
  cfg.alpha_test = 1.0 / alpha_train;
  cfg.seed = seed;
  return cfg;
}

void ShiftConfig::validate() const {
  if (!(alpha_train > 0) || !(alpha_test > 0)) throw DomainError("alpha must be positive");
  if (!(p_yc > 0 && p_yc < 1)) throw DomainError("p_yc must lie in (0, 1)");
  if (!(p_yp > 0 && p_yp < 1)) throw DomainError("p_yp must lie in (0, 1)");
  if (!(test_pool_fraction > 0 && test_pool_fraction < 1)) {
    throw ValidationError("test_pool_fraction must lie in (0, 1)");
  }
  conditionals_from_alpha(alpha_train, p_yp, p_yc);
  conditionals_from_alpha(alpha_test, p_yp, p_yc);
}

Conditionals conditionals_from_alpha(double alpha, double p_yp, double p_yc) {
  if (!(alpha > 0)) throw DomainError("alpha must be positive");
  if (!(p_yc > 0 && p_yc < 1)) throw DomainError("p_yc must lie in (0, 1)");
  if (!(p_yp >= 0 && p_yp <= 1)) throw DomainError("p_yp must lie in [0, 1]");
  const double p0 = p_yp / (p_yc * alpha + (1.0 - p_yc));
  const double p1 = alpha * p0;
  if (p1 > 1.0) {
    throw DomainError("infeasible shift: P(y_p=1|y_c=1) = " + std::to_string(p1) + " exceeds 1");
  }
  if (p0 > 1.0) {
    throw DomainError("infeasible shift: P(y_p=1|y_c=0) = " + std::to_string(p0) + " exceeds 1");
  }
  return {p1, p0};
}

std::array<double, 4> joint_from_alpha(double alpha, double p_yp, double p_yc) {
  const auto [p1, p0] = conditionals_from_alpha(alpha, p_yp, p_yc);
  std::array<double, 4> joint{};
  joint[cell_index(0, 0)] = (1.0 - p_yc) * (1.0 - p0);
  joint[cell_index(0, 1)] = p_yc * (1.0 - p1);
  joint[cell_index(1, 0)] = (1.0 - p_yc) * p0;
  joint[cell_index(1, 1)] = p_yc * p1;
  return joint;
}

std::array<std::size_t, 4> largest_remainder_counts(const std::array<double, 4>& probs,
                                                    std::size_t n) {
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> rem{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    const double exact = probs[c] * static_cast<double>(n);
    // guard against 179.99999999 style representation error
    const double snapped = std::abs(exact - std::round(exact)) < 1e-9 ? std::round(exact) : exact;
    counts[c] = static_cast<std::size_t>(std::floor(snapped));
    rem[c] = snapped - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 4]];
  return counts;
}

std::array<std::size_t, 4> cell_counts(std::span<const Example> examples) {
  std::array<std::size_t, 4> counts{};
  for (const auto& e : examples) ++counts[cell_index(e.y_p, e.y_c)];
  return counts;
}

Split sample_split(std::span<const Example> pool, std::size_t n, double alpha,
                   const ShiftConfig& cfg, std::uint64_t seed, const std::string& name) {
  const auto targets = largest_remainder_counts(joint_from_alpha(alpha, cfg.p_yp, cfg.p_yc), n);
  const auto cells = cells_of(pool);
  std::mt19937_64 rng(seed);
  Split split;
  split.name = name;
  for (std::size_t c = 0; c < 4; ++c) {
    if (targets[c] == 0) continue;
    const auto& members = cells[c];
    if (members.empty()) throw DataError("pool has no examples in cell " + cell_name(c));
    if (cfg.sample_with_replacement) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      for (std::size_t i = 0; i < targets[c]; ++i) split.draws.push_back(members[pick(rng)]);
    } else {
      if (members.size() < targets[c]) {
        throw DataError("cell " + cell_name(c) + " has too few examples for sampling without replacement");
      }
      std::vector<std::size_t> shuffled = members;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      split.draws.insert(split.draws.end(), shuffled.begin(),
                         shuffled.begin() + static_cast<std::ptrdiff_t>(targets[c]));
    }
  }
  std::shuffle(split.draws.begin(), split.draws.end(), rng);
  split.examples.reserve(split.draws.size());
  for (std::size_t d : split.draws) split.examples.push_back(pool[d]);
  return split;
}

Benchmark make_benchmark(std::span<const Example> pool, const ShiftConfig& cfg) {
  cfg.validate();
  auto cells = cells_of(pool);
  std::mt19937_64 rng(derive_seed(cfg.seed, 0));
  std::vector<Example> train_side, test_side;
  std::vector<std::size_t> train_origin, test_origin;
  for (std::size_t c = 0; c < 4; ++c) {
    auto& members = cells[c];
    if (members.size() < 2) throw DataError("pool cell " + cell_name(c) + " needs at least two examples");
    std::shuffle(members.begin(), members.end(), rng);
    auto n_test = static_cast<std::size_t>(std::round(cfg.test_pool_fraction * members.size()));
    n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
    for (std::size_t i = 0; i < members.size(); ++i) {
      const bool to_test = i < n_test;
      (to_test ? test_side : train_side).push_back(pool[members[i]]);
      (to_test ? test_origin : train_origin).push_back(members[i]);
    }
  }
  auto remap = [](Split s, const std::vector<std::size_t>& origin) {
    for (auto& d : s.draws) d = origin[d];
    return s;
  };
  Benchmark b;
  b.train = remap(sample_split(train_side, cfg.n_train, cfg.alpha_train, cfg, derive_seed(cfg.seed, 1), "train"),
                  train_origin);
  b.valid = remap(sample_split(train_side, cfg.n_valid, cfg.alpha_train, cfg, derive_seed(cfg.seed, 2), "valid"),
                  train_origin);
  b.test = remap(sample_split(test_side, cfg.n_test, cfg.alpha_test, cfg, derive_seed(cfg.seed, 3), "test"),
                 test_origin);
  b.balanced = remap(sample_split(test_side, cfg.n_test, 1.0, cfg, derive_seed(cfg.seed, 4), "balanced"),
                     test_origin);
  return b;
}

Dataset healthy_only(std::span<const Example> examples) {
  Dataset out;
  for (const auto& e : examples) {
    if (e.y_p == 0) out.push_back(e);
  }
  return out;
}

void write_manifest(std::ostream& out, const Split& split) {
  for (std::size_t i = 0; i < split.examples.size(); ++i) {
    const Example& e = split.examples[i];
    nlohmann::json line = {{"source_id", e.source_id},
                           {"y_p", e.y_p},
                           {"y_c", e.y_c},
                           {"split", split.name},
                           {"draw", i < split.draws.size() ? split.draws[i] : i}};
    out << line.dump() << '\n';
  }
}

std::string manifest_text(const Split& split) {
  std::ostringstream out;
  write_manifest(out, split);
  return out.str();
}

void write_examples_jsonl(std::ostream& out, std::span<const Example> examples) {
  for (const auto& e : examples) {
    nlohmann::json line = {
        {"token_ids", e.token_ids}, {"y_p", e.y_p}, {"y_c", e.y_c}, {"source_id", e.source_id}};
    out << line.dump() << '\n';
  }
}

void write_examples_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_examples_jsonl(out, examples);
}

Dataset read_examples_jsonl(std::istream& in) {
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Example e;
      e.token_ids = j.at("token_ids").get<std::vector<int>>();
      e.y_p = j.at("y_p").get<int>();
      e.y_c = j.at("y_c").get<int>();
      e.source_id = j.value("source_id", "line" + std::to_string(line_no));
      validate_example(e);
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("pool line " + std::to_string(line_no) + ": " + ex.what());
    } catch (const ValidationError& ex) {
      throw DataError("pool line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return out;
}

Dataset read_examples_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_examples_jsonl(in);
}

}  // namespace deconf
