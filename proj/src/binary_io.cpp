#include "ate/binary_io.hpp"

namespace ate::io {

void Writer::matrix_f32(const diff::Matrix& m) {
  u64(static_cast<uint64_t>(m.rows()));
  u64(static_cast<uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) f32(static_cast<float>(m.data()[i]));
}

void Writer::matrix_f64(const diff::Matrix& m) {
  u64(static_cast<uint64_t>(m.rows()));
  u64(static_cast<uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
}

std::string Reader::str(std::size_t max_len) {
  const uint64_t n = u64();
  if (n > max_len) throw CorruptionError("string length out of range");
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

diff::Matrix Reader::shape_header() {
  const uint64_t rows = u64();
  const uint64_t cols = u64();
  constexpr uint64_t kLimit = uint64_t{1} << 32;
  if (rows > kLimit || cols > kLimit || rows * cols > kLimit) {
    throw CorruptionError("array shape out of range");
  }
  return diff::Matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

diff::Matrix Reader::matrix_f32() {
  diff::Matrix m = shape_header();
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(f32());
  return m;
}

diff::Matrix Reader::matrix_f64() {
  diff::Matrix m = shape_header();
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  return m;
}

void expect_magic(Reader& r, const char (&magic)[4], const std::string& what) {
  char got[4] = {};
  try {
    r.bytes(got, 4);
  } catch (const CorruptionError&) {
    throw FormatError(what + ": file too short for magic bytes");
  }
  if (std::memcmp(got, magic, 4) != 0) throw FormatError(what + ": bad magic bytes");
}

uint32_t expect_version(Reader& r, uint32_t expected, const std::string& what) {
  const uint32_t v = r.u32();
  if (v != expected) {
    throw UnsupportedVersionError(what + ": unsupported version " + std::to_string(v) +
                                  " (reader supports " + std::to_string(expected) + ")");
  }
  return v;
}

}  // namespace ate::io
