#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabgen/tensor.hpp"

namespace tabgen {

/// Raw little-endian 32-bit float files (.f32). On-disk format is
/// always f32 regardless of the build's scalar type.
inline void write_f32(const std::filesystem::path& path,
                      const std::vector<real>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  for (real v : data) {
    float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                          static_cast<unsigned char>((u >> 8) & 0xff),
                          static_cast<unsigned char>((u >> 16) & 0xff),
                          static_cast<unsigned char>((u >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<real> read_f32(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path.string());
  is.seekg(0, std::ios::end);
  std::streamoff bytes = is.tellg();
  is.seekg(0);
  if (bytes % 4 != 0)
    throw std::runtime_error("truncated f32 file: " + path.string());
  std::vector<real> out(static_cast<std::size_t>(bytes / 4));
  for (auto& v : out) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                      (static_cast<std::uint32_t>(b[1]) << 8) |
                      (static_cast<std::uint32_t>(b[2]) << 16) |
                      (static_cast<std::uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    v = static_cast<real>(f);
  }
  if (!is) throw std::runtime_error("read failed: " + path.string());
  return out;
}

/// FNV-1a over a file's bytes, hex-encoded; used for manifest checksums.
inline std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for checksum: " + path.string());
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace tabgen
