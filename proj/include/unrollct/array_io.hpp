#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "types.hpp"

namespace unrollct {

// Binary array file:
//   8 bytes  magic "URLLARR\0"
//   u32      version (1)
//   u32      ndims
//   u64      dims[ndims]
//   f64      payload, row-major, little-endian
// A text sidecar "<path>.meta" holds key=value metadata lines.

inline constexpr std::array<char, 8> kArrayMagic{'U', 'R', 'L', 'L', 'A', 'R', 'R', '\0'};
inline constexpr std::uint32_t kArrayVersion = 1;

using Meta = std::map<std::string, std::string>;

struct NdArray {
  std::vector<std::uint64_t> dims;
  Vec data;
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U u = std::bit_cast<U>(v);
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(U) > in.size()) throw IoError("array file truncated");
  U u = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b)
    u |= static_cast<U>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  pos += sizeof(U);
  return std::bit_cast<T>(u);
}

}  // namespace detail

/// Writes bytes to `path` via a temporary file in the same directory and a rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string encode_array(const NdArray& a) {
  std::uint64_t count = 1;
  for (auto d : a.dims) count *= d;
  if (count != a.data.size()) throw DimensionError("encode_array: dims do not match payload");
  std::string out(kArrayMagic.begin(), kArrayMagic.end());
  detail::put_le(out, kArrayVersion);
  detail::put_le(out, static_cast<std::uint32_t>(a.dims.size()));
  for (auto d : a.dims) detail::put_le(out, d);
  for (double v : a.data) detail::put_le(out, v);
  return out;
}

inline NdArray decode_array(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kArrayMagic.data(), 8) != 0) throw IoError("bad array magic");
  std::size_t pos = 8;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kArrayVersion) throw IoError("unsupported array version " + std::to_string(version));
  const auto nd = detail::get_le<std::uint32_t>(bytes, pos);
  NdArray a;
  std::uint64_t count = 1;
  for (std::uint32_t k = 0; k < nd; ++k) {
    a.dims.push_back(detail::get_le<std::uint64_t>(bytes, pos));
    count *= a.dims.back();
  }
  if (bytes.size() - pos != count * 8) throw IoError("array payload size mismatch");
  a.data.resize(count);
  for (auto& v : a.data) v = detail::get_le<double>(bytes, pos);
  return a;
}

inline std::string encode_meta(const Meta& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
  return out;
}

inline Meta decode_meta(const std::string& text) {
  Meta m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("bad sidecar line: " + line);
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

inline std::filesystem::path meta_path(const std::filesystem::path& p) {
  auto m = p;
  m += ".meta";
  return m;
}

inline void write_array(const std::filesystem::path& path, const NdArray& a, const Meta& meta = {}) {
  write_file_atomic(path, encode_array(a));
  write_file_atomic(meta_path(path), encode_meta(meta));
}

inline NdArray read_array(const std::filesystem::path& path, Meta* meta = nullptr) {
  NdArray a = decode_array(read_file(path));
  if (meta) {
    const auto mp = meta_path(path);
    *meta = std::filesystem::exists(mp) ? decode_meta(read_file(mp)) : Meta{};
  }
  return a;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline void write_image(const std::filesystem::path& path, const Image& x, Meta meta = {}) {
  meta["kind"] = "image";
  meta["pixel_size"] = fmt_double(x.pixel_size);
  write_array(path, {{x.height, x.width}, x.values}, meta);
}

inline Image read_image(const std::filesystem::path& path) {
  Meta meta;
  NdArray a = read_array(path, &meta);
  if (a.dims.size() != 2) throw IoError("image file must be 2-D: " + path.string());
  Image x(a.dims[1], a.dims[0]);
  if (auto it = meta.find("pixel_size"); it != meta.end()) x.pixel_size = std::stod(it->second);
  x.values = std::move(a.data);
  return x;
}

inline void write_sinogram(const std::filesystem::path& path, const Sinogram& s, Meta meta = {}) {
  if (!s.is_full()) throw DimensionError("write_sinogram: expected a full sinogram");
  meta["kind"] = "sinogram";
  meta["detector_spacing"] = fmt_double(s.geometry.detector_spacing);
  write_array(path, {{s.geometry.n_angles, s.geometry.n_detectors}, s.values}, meta);
}

inline Sinogram read_sinogram(const std::filesystem::path& path) {
  Meta meta;
  NdArray a = read_array(path, &meta);
  if (a.dims.size() != 2) throw IoError("sinogram file must be 2-D: " + path.string());
  Geometry g{a.dims[0], a.dims[1], 1.0};
  if (auto it = meta.find("detector_spacing"); it != meta.end()) g.detector_spacing = std::stod(it->second);
  Sinogram s(g);
  s.values = std::move(a.data);
  return s;
}

}  // namespace unrollct
