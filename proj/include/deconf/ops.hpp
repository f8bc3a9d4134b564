#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deconf/autodiff.hpp"

namespace deconf {

/// Row ranges of a packed batch: sequence `s` occupies rows
/// [offsets[s], offsets[s+1]). Sequences are concatenated without padding.
struct Segments {
  std::vector<Index> offsets{0};

  Index count() const { return static_cast<Index>(offsets.size()) - 1; }
  Index total_rows() const { return offsets.back(); }
  Index begin(Index s) const { return offsets[s]; }
  Index length(Index s) const { return offsets[s + 1] - offsets[s]; }
  void push(Index length) { offsets.push_back(offsets.back() + length); }
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// `a` (m x n) plus a 1 x n row broadcast over every row.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var gelu(Var x);
Var softmax_rows(Var x);
/// Sum of all entries, as a 1 x 1 node.
Var sum(Var x);

/// Normalizes each row to zero mean and unit (biased) variance, then applies
/// the per-column affine map. `gain` and `bias` are 1 x d.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Mean negative log-likelihood of binary `labels` under row softmax of the
/// m x 2 `logits`. Returns a 1 x 1 node.
Var cross_entropy_logits(Var logits, std::span<const int> labels);

/// Gathers rows of `table`; the gradient is scatter-added back.
Var embedding(Var table, std::span<const int> ids);

/// Mean over each segment's rows; output is count x d.
Var mean_pool(Var x, const Segments& segments);

/// Inverted dropout. Identity when `rate` is zero.
Var dropout(Var x, double rate, std::uint64_t seed);

/// Multi-head scaled dot-product self-attention restricted to each segment.
/// q, k, v are N x d with heads laid out as contiguous column blocks.
Var attention(Var q, Var k, Var v, const Segments& segments, int n_heads);

}  // namespace deconf
