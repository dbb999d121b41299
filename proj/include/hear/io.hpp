// Little-endian binary primitives and small text helpers shared by the
// checkpoint and dataset container formats.
#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "hear/errors.hpp"

namespace hear {
namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw ParseError("unexpected end of file");
  }
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffu));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t u;
  static_assert(sizeof(u) == sizeof(f));
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}

inline float get_f32(std::istream& is) {
  const std::uint32_t u = get_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t u;
  static_assert(sizeof(u) == sizeof(d));
  std::memcpy(&u, &d, 8);
  put_u64(os, u);
}

inline double get_f64(std::istream& is) {
  const std::uint64_t u = get_u64(is);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const std::uint32_t len = get_u32(is);
  std::string s(len, '\0');
  if (len > 0 && !is.read(s.data(), len)) {
    throw ParseError("unexpected end of file");
  }
  return s;
}

// Bulk float block in little-endian order, one memcpy-decoded value per
// element.
inline void put_f32_block(std::ostream& os, const float* data,
                          std::size_t count) {
  std::vector<char> buf(count * 4);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u;
    std::memcpy(&u, data + i, 4);
    buf[i * 4 + 0] = static_cast<char>(u & 0xff);
    buf[i * 4 + 1] = static_cast<char>((u >> 8) & 0xff);
    buf[i * 4 + 2] = static_cast<char>((u >> 16) & 0xff);
    buf[i * 4 + 3] = static_cast<char>((u >> 24) & 0xff);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void get_f32_block(std::istream& is, float* data, std::size_t count) {
  std::vector<unsigned char> buf(count * 4);
  if (count > 0 &&
      !is.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size()))) {
    throw ParseError("unexpected end of file");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(buf[i * 4 + 0]) |
                            (static_cast<std::uint32_t>(buf[i * 4 + 1]) << 8) |
                            (static_cast<std::uint32_t>(buf[i * 4 + 2]) << 16) |
                            (static_cast<std::uint32_t>(buf[i * 4 + 3]) << 24);
    std::memcpy(data + i, &u, 4);
  }
}

}  // namespace detail
}  // namespace hear
