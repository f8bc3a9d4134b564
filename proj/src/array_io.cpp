#include "deconf/array_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace deconf {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'C', 'O', 'N', 'F', 'A', 'R', 'R'};
constexpr std::uint32_t kVersion = 1;

void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw DataError("array bundle: truncated input");
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v;
  read_exact(in, reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v;
  read_exact(in, reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

const Tensor& ArrayBundle::at(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a.value;
  }
  throw DataError("array bundle: no array named '" + name + "'");
}

void write_bundle(std::ostream& out, const ArrayBundle& bundle) {
  nlohmann::json header;
  header["meta"] = bundle.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : bundle.arrays) {
    header["arrays"].push_back({{"name", a.name}, {"rows", a.value.rows()}, {"cols", a.value.cols()}});
  }
  const std::string text = header.dump();
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kVersion);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : bundle.arrays) {
    out.write(reinterpret_cast<const char*>(a.value.data()),
              static_cast<std::streamsize>(a.value.size() * sizeof(double)));
  }
  if (!out) throw DataError("array bundle: write failed");
}

nlohmann::json read_header_json(std::istream& in, const char* what) {
  const std::uint64_t len = read_u64(in);
  if (len > kMaxHeaderBytes) throw DataError(std::string(what) + ": header length out of range");
  std::string text(len, '\0');
  read_exact(in, text.data(), len);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string(what) + ": malformed header: " + e.what());
  }
}

ArrayBundle read_bundle(std::istream& in) {
  std::array<char, 8> magic{};
  read_exact(in, magic.data(), magic.size());
  if (magic != kMagic) throw DataError("array bundle: bad magic");
  if (read_u32(in) != kVersion) throw DataError("array bundle: unsupported version");
  const nlohmann::json header = read_header_json(in, "array bundle");
  ArrayBundle bundle;
  try {
    bundle.meta = header.at("meta");
    for (const auto& entry : header.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<Index>(), cols = entry.at("cols").get<Index>();
      if (rows < 0 || cols < 0) throw DataError("array bundle: negative shape for " + a.name);
      a.value.resize(rows, cols);
      read_exact(in, reinterpret_cast<char*>(a.value.data()),
                 static_cast<std::size_t>(a.value.size()) * sizeof(double));
      bundle.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("array bundle: bad header: ") + e.what());
  }
  return bundle;
}

void write_bundle(const std::filesystem::path& path, const ArrayBundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_bundle(out, bundle);
}

ArrayBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_bundle(in);
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace deconf
