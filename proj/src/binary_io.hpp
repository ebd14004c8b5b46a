#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace mvq::detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw std::runtime_error(std::string("truncated file while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float f) { write_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline float read_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(read_u32(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  std::array<char, 4> got{};
  in.read(got.data(), 4);
  if (!in || std::memcmp(got.data(), magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic: expected ") + magic);
  }
}

}  // namespace mvq::detail
