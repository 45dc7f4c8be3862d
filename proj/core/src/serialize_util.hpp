#pragma once

// Internal byte-level helpers for checkpoint files. Everything on disk is
// little-endian regardless of the host.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "medcl/error.hpp"

namespace medcl::detail {

inline void write_u64_le(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  require(in.good(), ErrorCode::FormatError, "checkpoint truncated while reading length field");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_doubles_le(std::ostream& out, const double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    write_u64_le(out, bits);
  }
}

inline void read_doubles_le(std::istream& in, double* data, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = read_u64_le(in);
    std::memcpy(&data[i], &bits, 8);
  }
}

inline std::string read_bytes(std::istream& in, size_t n) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  require(in.good(), ErrorCode::FormatError, "checkpoint truncated while reading header");
  return s;
}

}  // namespace medcl::detail
