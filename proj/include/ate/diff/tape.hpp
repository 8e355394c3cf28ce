#pragma once

// Tensor-level reverse-mode differentiation.
//
// A Tape records every operation applied during a forward pass. Node values
// are dense row-major double matrices; sequences and batches are stacked
// along rows. Nodes are appended in evaluation order, so the tape order is a
// valid topological order and backward is a single reverse sweep.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ate/diff/param_store.hpp"

namespace ate::diff {

class Tape;

// Handle to a tape node. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives a gradient.
  Var constant(Matrix value);
  // Leaf whose gradient is retained after backward.
  Var variable(Matrix value);
  // Leaf bound to a named parameter. Repeated calls with the same name return
  // the same node so gradients accumulate. When parameters are frozen the
  // leaf behaves like a constant.
  Var param(const ParamStore& store, const std::string& name);

  void set_params_frozen(bool frozen) { params_frozen_ = frozen; }
  bool params_frozen() const { return params_frozen_; }

  // Reverse sweep seeded with output_grad (same shape as the output).
  void backward(Var output, const Matrix& output_grad);
  // Reverse sweep for a 1x1 output seeded with 1.
  void backward(Var output);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::string_view op_name(int id) const { return nodes_[id].op; }

  // Gradient of a node after backward; zeros if nothing flowed into it.
  Matrix grad(Var v) const;

  // Gradients for every parameter in store. Parameters that were not bound
  // to this tape or not on a path to the output get exact zeros.
  Gradients param_grads(const ParamStore& store) const;

  // For op implementations.
  Var push(Matrix value, std::string_view op, std::span<const Var> inputs, Backward backward);
  Var push(Matrix value, std::string_view op, std::initializer_list<Var> inputs,
           Backward backward) {
    return push(std::move(value), op, std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
  }
  Matrix& grad_ref(int id);
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::string_view op;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
  bool params_frozen_ = false;
  bool consumed_ = false;
};

// Throws DimensionError naming op when the condition fails.
void check_dims(bool ok, std::string_view op, const std::string& detail);

}  // namespace ate::diff
