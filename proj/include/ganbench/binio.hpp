#pragma once

// Little-endian primitives shared by the binary containers (tensor files,
// checkpoints). Doubles travel as their IEEE-754 bit patterns, so round
// trips are exact.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "ganbench/common.hpp"

namespace ganbench::binio {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& in, const std::string& path, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw IoError(path + ": truncated while reading " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline double get_f64(std::istream& in, const std::string& path, const char* what) {
  return std::bit_cast<double>(get_u64(in, path, what));
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& in, const std::string& path, const char* what) {
  const std::uint64_t len = get_u64(in, path, what);
  if (len > (1u << 20)) throw IoError(path + ": implausible string length");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), static_cast<std::streamsize>(len)))
    throw IoError(path + ": truncated while reading " + what);
  return s;
}

}  // namespace ganbench::binio
