#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ferm/util/error.hpp"

namespace ferm::io {

// All binary file formats in this project are little-endian. These helpers
// serialize explicitly byte by byte so the on-disk layout does not depend on
// host endianness.

inline void write_u8(std::ostream& os, uint8_t v) {
  os.put(static_cast<char>(v));
}

inline void write_u32(std::ostream& os, uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  os.write(b, 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, static_cast<uint32_t>(v & 0xffffffffull));
  write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
  write_u32(os, std::bit_cast<uint32_t>(v));
}

inline void write_f32_array(std::ostream& os, const float* p, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
  } else {
    for (size_t i = 0; i < n; ++i) write_f32(os, p[i]);
  }
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline bool try_read_u8(std::istream& is, uint8_t& v) {
  int c = is.get();
  if (c == std::char_traits<char>::eof()) return false;
  v = static_cast<uint8_t>(c);
  return true;
}

inline bool try_read_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) return false;
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

inline uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  if (!try_read_u32(is, v)) raise(ErrorKind::truncated_file, "truncated while reading " + what);
  return v;
}

inline uint64_t read_u64(std::istream& is, const std::string& what) {
  uint64_t lo = read_u32(is, what);
  uint64_t hi = read_u32(is, what);
  return lo | (hi << 32);
}

inline float read_f32(std::istream& is, const std::string& what) {
  return std::bit_cast<float>(read_u32(is, what));
}

inline bool try_read_f32_array(std::istream& is, float* p, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4));
    return static_cast<size_t>(is.gcount()) == n * 4;
  } else {
    for (size_t i = 0; i < n; ++i) {
      uint32_t v;
      if (!try_read_u32(is, v)) return false;
      p[i] = std::bit_cast<float>(v);
    }
    return true;
  }
}

inline void read_f32_array(std::istream& is, float* p, size_t n, const std::string& what) {
  if (!try_read_f32_array(is, p, n))
    raise(ErrorKind::truncated_file, "truncated while reading " + what);
}

inline std::string read_str(std::istream& is, const std::string& what) {
  uint32_t n = read_u32(is, what);
  if (n > (1u << 20)) raise(ErrorKind::io, "unreasonable string length in " + what);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<uint32_t>(is.gcount()) != n)
    raise(ErrorKind::truncated_file, "truncated while reading " + what);
  return s;
}

}  // namespace ferm::io
