#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>

#include "ate/rng.hpp"

namespace ate::diff {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;

// Gradients keyed by parameter name.
using Gradients = std::map<std::string, Matrix>;

// Named parameter tensors. Names are unique and shapes are fixed once added;
// values can be overwritten in place but never resized.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  uint64_t seed() const { return seed_; }
  // Generator used by initializers. Initialization order is deterministic,
  // so the same seed and construction sequence reproduce values bit-for-bit.
  Rng& init_rng() { return rng_; }

  const Matrix& add(const std::string& name, Matrix init);
  const Matrix& add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                           double stddev);
  // Fan-based (Glorot) normal init for a fan_in x fan_out weight.
  const Matrix& add_glorot(const std::string& name, Eigen::Index fan_in, Eigen::Index fan_out,
                           double gain = 1.0);
  const Matrix& add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  const Matrix& add_constant(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                             double value);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Matrix& at(const std::string& name) const;
  // Writable view with a fixed shape.
  MatrixMap view(const std::string& name);
  // Overwrites a parameter; the shape must match.
  void assign(const std::string& name, const Matrix& value);

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  // FNV-1a over names and raw value bytes.
  uint64_t checksum() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  uint64_t seed_;
  Rng rng_;
  std::map<std::string, Matrix> params_;
};

}  // namespace ate::diff
