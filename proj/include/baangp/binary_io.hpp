#pragma once

// Explicit little-endian encoding for checkpoint payloads.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "baangp/error.hpp"

namespace baangp::binio {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_i64(std::ostream& os, std::int64_t v) { write_u64(os, static_cast<std::uint64_t>(v)); }

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_f32s(std::ostream& os, std::span<const float> xs) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(xs.data()), std::streamsize(xs.size() * sizeof(float)));
  } else {
    for (float x : xs) write_f32(os, x);
  }
}

inline void write_tag(std::ostream& os, const char (&tag)[5]) { os.write(tag, 4); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

inline void read_exact(std::istream& is, void* dst, std::size_t n) {
  is.read(static_cast<char*>(dst), std::streamsize(n));
  if (!is || std::size_t(is.gcount()) != n) throw DataError("binary stream truncated");
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  read_exact(is, b, 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

inline std::int64_t read_i64(std::istream& is) { return static_cast<std::int64_t>(read_u64(is)); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline void read_f32s(std::istream& is, std::span<float> xs) {
  if constexpr (std::endian::native == std::endian::little) {
    read_exact(is, xs.data(), xs.size() * sizeof(float));
  } else {
    for (float& x : xs) x = read_f32(is);
  }
}

inline void expect_tag(std::istream& is, const char (&tag)[5]) {
  char got[4];
  read_exact(is, got, 4);
  if (std::memcmp(got, tag, 4) != 0) {
    throw DataError(std::string("expected section '") + tag + "', found '" + std::string(got, 4) + "'");
  }
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1u << 24) {
  const std::uint64_t n = read_u64(is);
  if (n > max_len) throw DataError("binary string length out of range");
  std::string s(n, '\0');
  read_exact(is, s.data(), n);
  return s;
}

inline void write_f32_vector(std::ostream& os, std::span<const float> xs) {
  write_u64(os, xs.size());
  write_f32s(os, xs);
}

inline std::vector<float> read_f32_vector(std::istream& is, std::size_t max_len = std::size_t(1) << 31) {
  const std::uint64_t n = read_u64(is);
  if (n > max_len) throw DataError("binary vector length out of range");
  std::vector<float> v(n);
  read_f32s(is, v);
  return v;
}

} // namespace baangp::binio
