#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hd2/error.hpp"

namespace hd2::dataio {

// Little-endian byte plumbing shared by the binary containers.

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  __builtin_memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

struct ByteReader {
  const std::vector<uint8_t>& buf;
  size_t pos = 0;

  size_t remaining() const { return buf.size() - pos; }
  void need(size_t n, const char* what) {
    if (remaining() < n)
      throw LengthError(std::string(what) + ": need " + std::to_string(n) +
                        " more bytes, have " + std::to_string(remaining()));
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return buf[pos++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    double v;
    __builtin_memcpy(&v, &bits, sizeof(v));
    return v;
  }
};

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace hd2::dataio
