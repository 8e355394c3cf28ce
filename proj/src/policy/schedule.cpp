#include "ate/policy/schedule.hpp"

#include <cmath>
#include <string>

#include "ate/diff/tape.hpp"
#include "ate/errors.hpp"

namespace ate::policy {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule: steps must be at least 1");
  if (!(beta_start > 0.0 && beta_end > 0.0 && beta_start < 1.0 && beta_end < 1.0)) {
    throw ConfigError("schedule: betas must lie in (0, 1)");
  }
  std::vector<double> alphas(static_cast<std::size_t>(steps));
  for (int k = 1; k <= steps; ++k) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(k - 1) / (steps - 1);
    alphas[static_cast<std::size_t>(k - 1)] = 1.0 - (beta_start + frac * (beta_end - beta_start));
  }
  return from_alphas(std::move(alphas));
}

NoiseSchedule NoiseSchedule::standard(int steps) {
  if (steps < 21) throw ConfigError("schedule: the standard schedule needs at least 21 steps");
  return linear(steps, 0.1 / steps, 20.0 / steps);
}

NoiseSchedule NoiseSchedule::from_alphas(std::vector<double> alphas) {
  if (alphas.empty()) throw ConfigError("schedule: no steps");
  NoiseSchedule s;
  s.alpha_ = std::move(alphas);
  const std::size_t n = s.alpha_.size();
  s.alpha_bar_.assign(n + 1, 1.0);
  s.sigma_.assign(n + 1, 0.0);
  for (std::size_t k = 1; k <= n; ++k) {
    const double a = s.alpha_[k - 1];
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("schedule: alpha must lie in (0, 1)");
    s.alpha_bar_[k] = s.alpha_bar_[k - 1] * a;
  }
  for (std::size_t k = 2; k <= n; ++k) {
    const double a = s.alpha_[k - 1];
    s.sigma_[k] = std::sqrt((1.0 - s.alpha_bar_[k - 1]) / (1.0 - s.alpha_bar_[k]) * (1.0 - a));
  }
  return s;
}

void NoiseSchedule::check_step(int k) const {
  if (k < 1 || k > steps()) {
    throw UsageError("diffusion step " + std::to_string(k) + " outside [1, " +
                     std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::alpha(int k) const {
  check_step(k);
  return alpha_[static_cast<std::size_t>(k - 1)];
}

double NoiseSchedule::alpha_bar(int k) const {
  if (k == 0) return 1.0;
  check_step(k);
  return alpha_bar_[static_cast<std::size_t>(k)];
}

double NoiseSchedule::sigma(int k) const {
  check_step(k);
  return sigma_[static_cast<std::size_t>(k)];
}

Matrix corrupt_diffusion(const Matrix& a0, int k, const Matrix& eps, const NoiseSchedule& sched) {
  diff::check_dims(a0.rows() == eps.rows() && a0.cols() == eps.cols(), "corrupt_diffusion",
                   "noise shape differs from the chunk");
  if (k == 0) throw UsageError("diffusion step 0 is not a noise level");
  const double ab = sched.alpha_bar(k);
  return std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * eps;
}

Matrix denoise_step(const Matrix& a_k, int k, const Matrix& eps_hat, const Matrix& fresh_noise,
                    const NoiseSchedule& sched, ReverseUpdate rule) {
  diff::check_dims(a_k.rows() == eps_hat.rows() && a_k.cols() == eps_hat.cols(), "denoise_step",
                   "predicted noise shape differs from the sample");
  const double a = sched.alpha(k);
  const double ab = sched.alpha_bar(k);
  const double coef =
      rule == ReverseUpdate::full_noise ? std::sqrt(1.0 - ab) : (1.0 - a) / std::sqrt(1.0 - ab);
  Matrix out = (a_k - coef * eps_hat) / std::sqrt(a);
  if (k > 1) {
    diff::check_dims(fresh_noise.rows() == a_k.rows() && fresh_noise.cols() == a_k.cols(),
                     "denoise_step", "fresh noise shape differs from the sample");
    out += sched.sigma(k) * fresh_noise;
  }
  return out;
}

Matrix corrupt_flow(const Matrix& a0, double tau, const Matrix& eps) {
  diff::check_dims(a0.rows() == eps.rows() && a0.cols() == eps.cols(), "corrupt_flow",
                   "noise shape differs from the chunk");
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("corrupt_flow: tau outside [0, 1]");
  return tau * a0 + (1.0 - tau) * eps;
}

double FlowTimeSampler::sample(Rng& rng) const { return rng.uniform(tau_min, 1.0); }

}  // namespace ate::policy
