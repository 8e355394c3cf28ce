#pragma once

#include <functional>

#include "ate/diff/tape.hpp"

namespace ate::diff {

// A differentiable computation with a 1x1 output.
using ScalarGraph = std::function<Var(Tape&, const ParamStore&, Var input)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // parameter name, or "input"
};

// Compares tape gradients against central finite differences for every
// parameter tensor and for the input. The error of one tensor is
// max|analytic - numeric| / (max|numeric| + 1e-12); tensors whose gradient
// is zero to within finite-difference resolution (1e-9 * max(1, |f|)) count
// as exact.
GradCheckResult grad_check(const ScalarGraph& graph, const ParamStore& store, const Matrix& input,
                           double eps);

}  // namespace ate::diff
