#include "ate/diff/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ate/errors.hpp"

namespace ate::diff {
namespace {

double evaluate(const ScalarGraph& graph, const ParamStore& store, const Matrix& input) {
  Tape tape;
  tape.set_params_frozen(true);
  return graph(tape, store, tape.constant(input)).scalar();
}

// Central differences cannot resolve gradients below roughly
// eps_machine * |f| / eps; a tensor whose analytic and numeric gradients both
// sit under that floor (e.g. a key bias, which softmax ignores) counts as exact.
double tensor_error(const Matrix& analytic, const Matrix& numeric, double noise_floor) {
  if (numeric.size() == 0) return 0.0;
  const double scale = numeric.cwiseAbs().maxCoeff();
  const double diff = (analytic - numeric).cwiseAbs().maxCoeff();
  if (scale < noise_floor && analytic.cwiseAbs().maxCoeff() < noise_floor) return 0.0;
  return diff / (scale + 1e-12);
}

}  // namespace

GradCheckResult grad_check(const ScalarGraph& graph, const ParamStore& store, const Matrix& input,
                           double eps) {
  if (!(eps > 0.0)) throw NumericDomainError("grad_check: eps must be positive");
  Tape tape;
  Var x = tape.variable(input);
  Var out = graph(tape, store, x);
  const double noise_floor = 1e-9 * std::max(1.0, std::abs(out.scalar()));
  tape.backward(out);
  const Gradients analytic = tape.param_grads(store);
  const Matrix input_grad = tape.grad(x);

  GradCheckResult result;
  ParamStore probe = store;
  for (const auto& [name, value] : store) {
    Matrix numeric(value.rows(), value.cols());
    MatrixMap p = probe.view(name);
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double up = evaluate(graph, probe, input);
      p.data()[i] = saved - eps;
      const double down = evaluate(graph, probe, input);
      p.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2.0 * eps);
    }
    const double err = tensor_error(analytic.at(name), numeric, noise_floor);
    if (err > result.max_relative_error) result = {err, name};
  }
  Matrix numeric(input.rows(), input.cols());
  Matrix shifted = input;
  for (Eigen::Index i = 0; i < input.size(); ++i) {
    const double saved = shifted.data()[i];
    shifted.data()[i] = saved + eps;
    const double up = evaluate(graph, store, shifted);
    shifted.data()[i] = saved - eps;
    const double down = evaluate(graph, store, shifted);
    shifted.data()[i] = saved;
    numeric.data()[i] = (up - down) / (2.0 * eps);
  }
  const double err = tensor_error(input_grad, numeric, noise_floor);
  if (err > result.max_relative_error) result = {err, "input"};
  return result;
}

}  // namespace ate::diff
