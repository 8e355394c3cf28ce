#include "ate/diff/tape.hpp"

#include "ate/errors.hpp"

namespace ate::diff {

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  check_dims(v.rows() == 1 && v.cols() == 1, "scalar", "node is not 1x1");
  return v(0, 0);
}

void check_dims(bool ok, std::string_view op, const std::string& detail) {
  if (!ok) throw DimensionError(std::string(op) + ": " + detail);
}

Var Tape::constant(Matrix value) {
  if (consumed_) throw UsageError("tape already consumed");
  nodes_.push_back(Node{std::move(value), Matrix(), false, "constant", nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Matrix value) {
  if (consumed_) throw UsageError("tape already consumed");
  nodes_.push_back(Node{std::move(value), Matrix(), true, "variable", nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Var v = params_frozen_ ? constant(store.at(name)) : variable(store.at(name));
  nodes_[v.id].op = "param";
  param_nodes_.emplace(name, v.id);
  return v;
}

Var Tape::push(Matrix value, std::string_view op, std::span<const Var> inputs,
               Backward backward) {
  if (consumed_) throw UsageError("tape already consumed");
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape != this) throw UsageError(std::string(op) + ": input from another tape");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, op, needs ? std::move(backward) : nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var output, const Matrix& output_grad) {
  if (consumed_) throw UsageError("backward: tape already consumed");
  if (output.tape != this) throw UsageError("backward: output from another tape");
  const Matrix& out = nodes_[output.id].value;
  check_dims(out.rows() == output_grad.rows() && out.cols() == output_grad.cols(), "backward",
             "output_grad shape differs from output shape");
  consumed_ = true;
  if (!nodes_[output.id].requires_grad) return;
  grad_ref(output.id) += output_grad;
  for (int id = output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.size() == 0) continue;
    n.backward(*this, id);
  }
}

void Tape::backward(Var output) {
  check_dims(output.rows() == 1 && output.cols() == 1, "backward", "implicit seed needs 1x1 output");
  backward(output, Matrix::Ones(1, 1));
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Gradients Tape::param_grads(const ParamStore& store) const {
  Gradients out;
  for (const auto& [name, value] : store) {
    auto it = param_nodes_.find(name);
    if (it == param_nodes_.end() || nodes_[it->second].grad.size() == 0) {
      out.emplace(name, Matrix::Zero(value.rows(), value.cols()));
    } else {
      out.emplace(name, nodes_[it->second].grad);
    }
  }
  return out;
}

}  // namespace ate::diff
