#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "deconf/model.hpp"

namespace deconf {

/// Per-matrix importance scores, on the same flat row-major coordinates as
/// the matrices themselves.
using ImportanceMap = std::map<MatrixId, Tensor>;

struct Coordinate {
  MatrixId matrix;
  Index flat = 0;

  auto operator<=>(const Coordinate&) const = default;
};

/// Sorted, duplicate-free set of weight coordinates to zero.
class WeightMask {
 public:
  WeightMask() = default;
  /// Sorts `coordinates`; throws ValidationError on duplicates or when the
  /// count exceeds `universe_size`.
  WeightMask(std::vector<Coordinate> coordinates, std::size_t universe_size);

  const std::vector<Coordinate>& coordinates() const { return coords_; }
  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  std::size_t universe_size() const { return universe_; }
  double ablation_ratio() const;
  bool contains(const Coordinate& c) const;
  std::size_t count_in(MatrixId id) const;

  auto begin() const { return coords_.begin(); }
  auto end() const { return coords_.end(); }

  bool operator==(const WeightMask&) const = default;

 private:
  std::vector<Coordinate> coords_;
  std::size_t universe_ = 0;
};

WeightMask mask_intersection(const WeightMask& a, const WeightMask& b);
WeightMask mask_difference(const WeightMask& a, const WeightMask& b);
WeightMask mask_union(const WeightMask& a, const WeightMask& b);

std::size_t universe_size(const ImportanceMap& pi);
ImportanceMap without_classifier(ImportanceMap pi);

/// floor(pct/100 * n), robust to representation error in pct.
std::size_t selection_count(double pct, std::size_t n);

/// Indices of the `count` largest entries, ordered by decreasing value with
/// ties broken by lower flat index.
std::vector<Index> top_entries(const Tensor& values, std::size_t count);

/// Nearest-rank percentile of the entries of `values` (pct in [0, 100]).
double nearest_rank_percentile(const Tensor& values, double pct);

/// Per matrix, masks the entries above the (100 - mask_pct)-th nearest-rank
/// percentile of that matrix's scores: exactly floor(mask_pct/100 * size)
/// entries, ties at the threshold resolved toward lower flat index.
WeightMask threshold_mask_per_matrix(const ImportanceMap& pi, std::span<const MatrixId> matrices,
                                     double mask_pct);

/// Global ranking of every coordinate in an importance map, computed once so
/// that top-k prefixes for many k are cheap.
class RankedImportance {
 public:
  explicit RankedImportance(const ImportanceMap& pi);

  std::size_t universe_size() const { return order_.size(); }
  /// The floor(k_pct/100 * universe) highest-scoring coordinates, sorted.
  std::vector<Coordinate> top(double k_pct) const;
  /// Matrix ids and sizes, in map order.
  const std::vector<std::pair<MatrixId, Index>>& layout() const { return layout_; }

 private:
  std::vector<std::pair<MatrixId, Index>> layout_;
  std::vector<Coordinate> order_;
};

/// Top k% coordinates of `pi` ranked globally across all its matrices; ties
/// by (matrix id, flat index).
std::vector<Coordinate> topk_set(const ImportanceMap& pi, double k_pct);

struct DualMasks {
  WeightMask intersection;  // top_k(p) ∩ top_k(c)
  WeightMask difference;    // top_k(c) \ top_k(p)
  WeightMask combined;      // intersection ∪ difference
};

DualMasks dual_filter_masks(const ImportanceMap& delta_p, const ImportanceMap& delta_c,
                            double k_pct);
DualMasks dual_filter_masks(const RankedImportance& delta_p, const RankedImportance& delta_c,
                            double k_pct);

/// Binary mask file; see docs/formats.md.
void write_mask(std::ostream& out, const WeightMask& mask, const nlohmann::json& source);
void write_mask(const std::filesystem::path& path, const WeightMask& mask,
                const nlohmann::json& source);
struct MaskFile {
  WeightMask mask;
  nlohmann::json source;
};
MaskFile read_mask(std::istream& in);
MaskFile read_mask(const std::filesystem::path& path);
/// SHA-256 of the serialized mask (with an empty source block).
std::string mask_hash(const WeightMask& mask);

}  // namespace deconf
