#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace deconf {

/// One labeled sequence. y_p is the primary label, y_c the confounder.
struct Example {
  std::vector<int> token_ids;
  int y_p = 0;
  int y_c = 0;
  std::string source_id;

  bool operator==(const Example&) const = default;
};

using Dataset = std::vector<Example>;

void validate_example(const Example& e);

/// Sampled examples plus the pool index each draw came from.
struct Split {
  std::string name;
  Dataset examples;
  std::vector<std::size_t> draws;
};

struct ShiftConfig {
  double alpha_train = 1.0;
  double alpha_test = 1.0;
  double p_yc = 0.5;
  double p_yp = 0.5;
  std::size_t n_train = 480;
  std::size_t n_valid = 120;
  std::size_t n_test = 150;
  std::uint64_t seed = 0;
  bool sample_with_replacement = true;
  /// Share of each cell reserved for the test-side splits.
  double test_pool_fraction = 0.25;

  /// Config with alpha_test = 1 / alpha_train.
  static ShiftConfig reciprocal(double alpha_train, std::uint64_t seed);
  void validate() const;
};

struct Conditionals {
  double p1;  // P(y_p = 1 | y_c = 1)
  double p0;  // P(y_p = 1 | y_c = 0)
};

/// Solves p1 = alpha * p0 and p_yc * p1 + (1 - p_yc) * p0 = p_yp.
Conditionals conditionals_from_alpha(double alpha, double p_yp, double p_yc);

/// Cell order used throughout: index = 2 * y_p + y_c.
inline constexpr std::size_t cell_index(int y_p, int y_c) {
  return static_cast<std::size_t>(2 * y_p + y_c);
}

/// Joint probabilities P(y_p, y_c) in cell order.
std::array<double, 4> joint_from_alpha(double alpha, double p_yp, double p_yc);

/// Largest-remainder apportionment of n over `probs`; ties in the remainder
/// go to the lower cell index.
std::array<std::size_t, 4> largest_remainder_counts(const std::array<double, 4>& probs, std::size_t n);

std::array<std::size_t, 4> cell_counts(std::span<const Example> examples);

/// Draws n examples whose cell counts equal the largest-remainder targets.
Split sample_split(std::span<const Example> pool, std::size_t n, double alpha,
                   const ShiftConfig& cfg, std::uint64_t seed, const std::string& name = "split");

struct Benchmark {
  Split train;
  Split valid;
  Split test;
  /// alpha = 1 split used for statistical-parity evaluation.
  Split balanced;
};

/// Train and valid under alpha_train, test under alpha_test, plus a balanced
/// split. Train/valid and the test-side splits draw from disjoint partitions
/// of each cell of the pool.
Benchmark make_benchmark(std::span<const Example> pool, const ShiftConfig& cfg);

/// Examples with y_p == 0.
Dataset healthy_only(std::span<const Example> examples);

/// JSON lines: {"source_id","y_p","y_c","split","draw"}.
void write_manifest(std::ostream& out, const Split& split);
std::string manifest_text(const Split& split);

/// JSON lines: {"token_ids","y_p","y_c","source_id"}.
void write_examples_jsonl(std::ostream& out, std::span<const Example> examples);
void write_examples_jsonl(const std::filesystem::path& path, std::span<const Example> examples);
Dataset read_examples_jsonl(std::istream& in);
Dataset read_examples_jsonl(const std::filesystem::path& path);

}  // namespace deconf
