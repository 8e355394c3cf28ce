#include "ate/diff/param_store.hpp"

#include <cmath>
#include <cstring>

#include "ate/errors.hpp"

namespace ate::diff {

const Matrix& ParamStore::add(const std::string& name, Matrix init) {
  auto [it, inserted] = params_.emplace(name, std::move(init));
  if (!inserted) throw UsageError("duplicate parameter name '" + name + "'");
  return it->second;
}

const Matrix& ParamStore::add_normal(const std::string& name, Eigen::Index rows,
                                     Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng_.normal();
  return add(name, std::move(m));
}

const Matrix& ParamStore::add_glorot(const std::string& name, Eigen::Index fan_in,
                                     Eigen::Index fan_out, double gain) {
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return add_normal(name, fan_in, fan_out, stddev);
}

const Matrix& ParamStore::add_zeros(const std::string& name, Eigen::Index rows,
                                    Eigen::Index cols) {
  return add(name, Matrix::Zero(rows, cols));
}

const Matrix& ParamStore::add_constant(const std::string& name, Eigen::Index rows,
                                       Eigen::Index cols, double value) {
  return add(name, Matrix::Constant(rows, cols, value));
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

MatrixMap ParamStore::view(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return MatrixMap(it->second.data(), it->second.rows(), it->second.cols());
}

void ParamStore::assign(const std::string& name, const Matrix& value) {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  if (it->second.rows() != value.rows() || it->second.cols() != value.cols()) {
    throw DimensionError("assign: shape mismatch for parameter '" + name + "'");
  }
  it->second = value;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : params_) n += static_cast<std::size_t>(m.size());
  return n;
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, m] : params_) {
    mix(name.data(), name.size());
    mix(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  return h;
}

}  // namespace ate::diff
