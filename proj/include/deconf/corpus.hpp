#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "deconf/shift.hpp"

namespace deconf {

/// Synthetic token corpus with planted primary-label and confounder markers.
///
/// Vocabulary layout, in id order: primary markers for y_p = 0, primary
/// markers for y_p = 1, confounder markers for y_c = 0, confounder markers
/// for y_c = 1, then neutral tokens up to vocab_size.
struct CorpusSpec {
  int vocab_size = 1024;
  int markers_per_set = 16;
  int min_len = 16;
  int max_len = 32;
  double marker_rate_primary = 0.06;
  double marker_rate_confounder = 0.15;
  std::size_t pool_size_per_cell = 500;
  std::uint64_t seed = 0;

  void validate() const;

  int primary_marker(int y_p, int k) const { return y_p * markers_per_set + k; }
  int confounder_marker(int y_c, int k) const { return (2 + y_c) * markers_per_set + k; }
  int first_neutral() const { return 4 * markers_per_set; }
  bool is_primary_marker(int token, int y_p) const;
  bool is_confounder_marker(int token, int y_c) const;
};

/// For each (y_p, y_c) cell emits pool_size_per_cell examples. Each position
/// is a primary marker of y_p with probability marker_rate_primary, else a
/// confounder marker of y_c with probability marker_rate_confounder, else a
/// uniformly drawn neutral token.
Dataset generate_pool(const CorpusSpec& spec);

/// One line per token id: "<id>\t<name>" where name is p0_k, p1_k, c0_k,
/// c1_k or n_k.
void write_vocabulary(std::ostream& out, const CorpusSpec& spec);
void write_vocabulary(const std::filesystem::path& path, const CorpusSpec& spec);

}  // namespace deconf
