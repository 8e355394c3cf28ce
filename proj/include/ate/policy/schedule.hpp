#pragma once

#include <vector>

#include "ate/diff/param_store.hpp"
#include "ate/rng.hpp"

namespace ate::policy {

using diff::Matrix;

// Discrete diffusion schedule indexed k = 1..K. alpha_bar(0) is 1.
class NoiseSchedule {
 public:
  // beta_k linear from beta_start to beta_end (k = 1..K), alpha_k = 1 - beta_k.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule from_alphas(std::vector<double> alphas);
  // Linear betas from 0.1 / K to 20 / K: the 1e-4 .. 0.02 range of a
  // 1000-step schedule, rescaled so K steps reach alpha_bar near zero.
  static NoiseSchedule standard(int steps = 50);

  int steps() const { return static_cast<int>(alpha_.size()); }
  double alpha(int k) const;
  double beta(int k) const { return 1.0 - alpha(k); }
  double alpha_bar(int k) const;
  // sqrt((1 - abar_{k-1}) / (1 - abar_k) * (1 - alpha_k)), zero at k = 1.
  double sigma(int k) const;
  const std::vector<double>& alphas() const { return alpha_; }

 private:
  void check_step(int k) const;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;  // index k, alpha_bar_[0] = 1
  std::vector<double> sigma_;      // index k
};

// a_k = sqrt(abar_k) a0 + sqrt(1 - abar_k) eps. Throws UsageError unless
// 1 <= k <= K.
Matrix corrupt_diffusion(const Matrix& a0, int k, const Matrix& eps, const NoiseSchedule& sched);

enum class ReverseUpdate {
  // x_{k-1} = (x_k - sqrt(1 - abar_k) eps_hat) / sqrt(alpha_k) + sigma_k z
  full_noise,
  // DDPM posterior mean:
  // x_{k-1} = (x_k - (1 - alpha_k) / sqrt(1 - abar_k) eps_hat) / sqrt(alpha_k) + sigma_k z
  posterior_mean,
};

// One reverse step. fresh_noise is ignored at k = 1.
Matrix denoise_step(const Matrix& a_k, int k, const Matrix& eps_hat, const Matrix& fresh_noise,
                    const NoiseSchedule& sched, ReverseUpdate rule);

// a_tau = tau a0 + (1 - tau) eps; tau = 0 is pure noise, tau = 1 is data.
Matrix corrupt_flow(const Matrix& a0, double tau, const Matrix& eps);

// Uniform flow time on [tau_min, 1].
struct FlowTimeSampler {
  double tau_min = 0.02;
  double sample(Rng& rng) const;
};

}  // namespace ate::policy
