#include "deconf/mask.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "deconf/array_io.hpp"

namespace deconf {

namespace {

constexpr std::array<char, 8> kMaskMagic = {'D', 'C', 'O', 'N', 'F', 'M', 'S', 'K'};
constexpr std::uint32_t kMaskVersion = 1;

void require_pct(double pct, const char* what) {
  if (!(pct >= 0.0 && pct <= 100.0)) {
    throw ValidationError(std::string(what) + " must lie in [0, 100]");
  }
}

void require_same_universe(const WeightMask& a, const WeightMask& b) {
  if (a.universe_size() != b.universe_size()) {
    throw ValidationError("mask set operation: universe sizes differ");
  }
}

}  // namespace

WeightMask::WeightMask(std::vector<Coordinate> coordinates, std::size_t universe_size)
    : coords_(std::move(coordinates)), universe_(universe_size) {
  std::sort(coords_.begin(), coords_.end());
  if (std::adjacent_find(coords_.begin(), coords_.end()) != coords_.end()) {
    throw ValidationError("weight mask: duplicate coordinate");
  }
  if (coords_.size() > universe_) throw ValidationError("weight mask: more coordinates than universe");
}

double WeightMask::ablation_ratio() const {
  return universe_ == 0 ? 0.0 : static_cast<double>(coords_.size()) / static_cast<double>(universe_);
}

bool WeightMask::contains(const Coordinate& c) const {
  return std::binary_search(coords_.begin(), coords_.end(), c);
}

std::size_t WeightMask::count_in(MatrixId id) const {
  const auto lo = std::lower_bound(coords_.begin(), coords_.end(), Coordinate{id, 0});
  auto hi = lo;
  while (hi != coords_.end() && hi->matrix == id) ++hi;
  return static_cast<std::size_t>(hi - lo);
}

WeightMask mask_intersection(const WeightMask& a, const WeightMask& b) {
  require_same_universe(a, b);
  std::vector<Coordinate> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return WeightMask(std::move(out), a.universe_size());
}

WeightMask mask_difference(const WeightMask& a, const WeightMask& b) {
  require_same_universe(a, b);
  std::vector<Coordinate> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return WeightMask(std::move(out), a.universe_size());
}

WeightMask mask_union(const WeightMask& a, const WeightMask& b) {
  require_same_universe(a, b);
  std::vector<Coordinate> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return WeightMask(std::move(out), a.universe_size());
}

std::size_t universe_size(const ImportanceMap& pi) {
  std::size_t n = 0;
  for (const auto& [id, t] : pi) n += static_cast<std::size_t>(t.size());
  return n;
}

ImportanceMap without_classifier(ImportanceMap pi) {
  pi.erase(MatrixId::cls());
  return pi;
}

std::size_t selection_count(double pct, std::size_t n) {
  require_pct(pct, "percentage");
  const double exact = pct / 100.0 * static_cast<double>(n);
  const auto count = static_cast<std::size_t>(std::floor(exact + 1e-9 * std::max(1.0, exact)));
  return std::min(count, n);
}

std::vector<Index> top_entries(const Tensor& values, std::size_t count) {
  const auto n = static_cast<std::size_t>(values.size());
  count = std::min(count, n);
  std::vector<Index> idx(n);
  std::iota(idx.begin(), idx.end(), Index{0});
  const double* v = values.data();
  auto before = [v](Index a, Index b) { return v[a] > v[b] || (v[a] == v[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), before);
  idx.resize(count);
  return idx;
}

double nearest_rank_percentile(const Tensor& values, double pct) {
  require_pct(pct, "percentile");
  if (values.size() == 0) throw ValidationError("percentile of an empty matrix");
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

WeightMask threshold_mask_per_matrix(const ImportanceMap& pi, std::span<const MatrixId> matrices,
                                     double mask_pct) {
  require_pct(mask_pct, "mask_pct");
  std::vector<Coordinate> coords;
  for (const MatrixId& id : matrices) {
    const auto it = pi.find(id);
    if (it == pi.end()) throw ValidationError("importance map has no entry for " + id.name());
    const Tensor& scores = it->second;
    const std::size_t count = selection_count(mask_pct, static_cast<std::size_t>(scores.size()));
    for (Index flat : top_entries(scores, count)) coords.push_back({id, flat});
  }
  return WeightMask(std::move(coords), universe_size(pi));
}

RankedImportance::RankedImportance(const ImportanceMap& pi) {
  struct Entry {
    double score;
    Coordinate coord;
  };
  std::vector<Entry> entries;
  entries.reserve(deconf::universe_size(pi));
  for (const auto& [id, scores] : pi) {
    layout_.emplace_back(id, scores.size());
    for (Index i = 0; i < scores.size(); ++i) entries.push_back({scores.data()[i], {id, i}});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.score > b.score || (a.score == b.score && a.coord < b.coord);
  });
  order_.reserve(entries.size());
  for (const auto& e : entries) order_.push_back(e.coord);
}

std::vector<Coordinate> RankedImportance::top(double k_pct) const {
  const std::size_t count = selection_count(k_pct, order_.size());
  std::vector<Coordinate> out(order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Coordinate> topk_set(const ImportanceMap& pi, double k_pct) {
  return RankedImportance(pi).top(k_pct);
}

DualMasks dual_filter_masks(const RankedImportance& delta_p, const RankedImportance& delta_c,
                            double k_pct) {
  if (delta_p.layout() != delta_c.layout()) {
    throw ValidationError("dual filter: importance maps cover different universes");
  }
  const std::size_t n = delta_c.universe_size();
  const WeightMask top_p(delta_p.top(k_pct), n);
  const WeightMask top_c(delta_c.top(k_pct), n);
  DualMasks out;
  out.intersection = mask_intersection(top_p, top_c);
  out.difference = mask_difference(top_c, top_p);
  out.combined = mask_union(out.intersection, out.difference);
  return out;
}

DualMasks dual_filter_masks(const ImportanceMap& delta_p, const ImportanceMap& delta_c,
                            double k_pct) {
  return dual_filter_masks(RankedImportance(delta_p), RankedImportance(delta_c), k_pct);
}

void write_mask(std::ostream& out, const WeightMask& mask, const nlohmann::json& source) {
  std::vector<MatrixId> matrices;
  for (const auto& c : mask) {
    if (matrices.empty() || matrices.back() != c.matrix) matrices.push_back(c.matrix);
  }
  nlohmann::json header;
  header["universe_size"] = mask.universe_size();
  header["source"] = source;
  header["matrices"] = nlohmann::json::array();
  for (const auto& id : matrices) header["matrices"].push_back(id.name());
  const std::string text = header.dump();
  out.write(kMaskMagic.data(), kMaskMagic.size());
  write_u32(out, kMaskVersion);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_u64(out, mask.size());
  std::uint32_t matrix_index = 0;
  for (const auto& c : mask) {
    while (matrices[matrix_index] != c.matrix) ++matrix_index;
    write_u32(out, matrix_index);
    write_u64(out, static_cast<std::uint64_t>(c.flat));
  }
  if (!out) throw DataError("mask: write failed");
}

void write_mask(const std::filesystem::path& path, const WeightMask& mask,
                const nlohmann::json& source) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_mask(out, mask, source);
}

MaskFile read_mask(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMaskMagic) throw DataError("mask: bad magic");
  if (read_u32(in) != kMaskVersion) throw DataError("mask: unsupported version");
  const auto header = read_header_json(in, "mask");
  std::vector<MatrixId> matrices;
  std::size_t universe = 0;
  try {
    for (const auto& name : header.at("matrices")) matrices.push_back(MatrixId::parse(name));
    universe = header.at("universe_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("mask: bad header: ") + e.what());
  } catch (const ValidationError& e) {
    throw DataError(std::string("mask: ") + e.what());
  }
  const std::uint64_t count = read_u64(in);
  if (count > universe) throw DataError("mask: more coordinates than the universe holds");
  std::vector<Coordinate> coords;
  coords.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t m = read_u32(in);
    const std::uint64_t flat = read_u64(in);
    if (m >= matrices.size()) throw DataError("mask: matrix index out of range");
    coords.push_back({matrices[m], static_cast<Index>(flat)});
  }
  try {
    return MaskFile{WeightMask(std::move(coords), universe), header.value("source", nlohmann::json::object())};
  } catch (const ValidationError& e) {
    throw DataError(std::string("mask: ") + e.what());
  }
}

MaskFile read_mask(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_mask(in);
}

std::string mask_hash(const WeightMask& mask) {
  std::ostringstream out(std::ios::binary);
  write_mask(out, mask, nlohmann::json::object());
  return sha256_hex(out.str());
}

}  // namespace deconf
