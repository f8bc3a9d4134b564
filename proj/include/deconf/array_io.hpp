#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "deconf/tensor.hpp"

namespace deconf {

struct NamedArray {
  std::string name;
  Tensor value;
};

/// Self-describing container of named 2-D float64 arrays plus JSON metadata.
///
/// Layout (all integers little-endian):
///   8 bytes   magic "DCONFARR"
///   u32       format version (1)
///   u64       header length H
///   H bytes   UTF-8 JSON: {"meta": <object>, "arrays": [{"name","rows","cols"}...]}
///   then, per array in header order, rows*cols float64 values, row-major.
struct ArrayBundle {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const Tensor& at(const std::string& name) const;
};

void write_bundle(std::ostream& out, const ArrayBundle& bundle);
ArrayBundle read_bundle(std::istream& in);
void write_bundle(const std::filesystem::path& path, const ArrayBundle& bundle);
ArrayBundle read_bundle(const std::filesystem::path& path);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

/// Little-endian scalar helpers shared by the binary formats.
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);

inline constexpr std::uint64_t kMaxHeaderBytes = 64ull << 20;

/// Reads a u64 length followed by that many bytes of JSON.
nlohmann::json read_header_json(std::istream& in, const char* what);

}  // namespace deconf
