#pragma once

// Little-endian primitives shared by the corpus and checkpoint formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ate/diff/param_store.hpp"
#include "ate/errors.hpp"

namespace ate::io {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void u8(uint8_t v) { bytes(&v, 1); }
  void u32(uint32_t v) { le(v); }
  void u64(uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  // u64 rows, u64 cols, then row-major values.
  void matrix_f32(const diff::Matrix& m);
  void matrix_f64(const diff::Matrix& m);

 private:
  template <typename U>
  void le(U v) {
    std::array<unsigned char, sizeof(U)> b{};
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b.data(), b.size());
  }
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw CorruptionError("truncated file");
  }
  uint8_t u8() {
    uint8_t v = 0;
    bytes(&v, 1);
    return v;
  }
  uint32_t u32() { return le<uint32_t>(); }
  uint64_t u64() { return le<uint64_t>(); }
  float f32() { return std::bit_cast<float>(le<uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<uint64_t>()); }
  std::string str(std::size_t max_len = std::size_t{1} << 30);
  diff::Matrix matrix_f32();
  diff::Matrix matrix_f64();
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  template <typename U>
  U le() {
    std::array<unsigned char, sizeof(U)> b{};
    bytes(b.data(), b.size());
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
  }
  diff::Matrix shape_header();
  std::istream& in_;
};

// Reads and compares a 4-byte magic tag; throws FormatError on mismatch.
void expect_magic(Reader& r, const char (&magic)[4], const std::string& what);
// Reads a u32 version; throws UnsupportedVersionError unless it equals expected.
uint32_t expect_version(Reader& r, uint32_t expected, const std::string& what);

}  // namespace ate::io
