#include "ate/diff/adam.hpp"

#include <cmath>

#include "ate/errors.hpp"

namespace ate::diff {

Adam::Adam(const ParamStore& store, AdamConfig config) : config_(config) {
  for (const auto& [name, value] : store) {
    first_.emplace(name, Matrix::Zero(value.rows(), value.cols()));
    second_.emplace(name, Matrix::Zero(value.rows(), value.cols()));
  }
}

void Adam::step(ParamStore& store, const Gradients& grads) {
  ++steps_;
  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto& [name, m] : first_) {
    auto git = grads.find(name);
    if (git == grads.end()) throw UsageError("adam: missing gradient for '" + name + "'");
    Matrix& v = second_.at(name);
    MatrixMap p = store.view(name);
    const Matrix g = git->second * clip;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p *= 1.0 - config_.learning_rate * config_.weight_decay;
    p.array() -= config_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
  }
}

}  // namespace ate::diff
