#pragma once

#include <functional>
#include <vector>

#include "ate/diff/tape.hpp"

namespace ate::vae {

using diff::Matrix;
using diff::Tape;
using diff::Var;

// Diagonal Gaussian posterior q(z|x).
struct LatentGaussian {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd log_var;

  Eigen::RowVectorXd stddev() const { return (0.5 * log_var.array()).exp(); }
  int dim() const { return static_cast<int>(mean.size()); }
};

// Empirical Gaussian N(mean, cov) summarizing a latent sample. In diagonal
// mode the off-diagonal entries are exactly zero.
struct PriorStats {
  Eigen::RowVectorXd mean;
  Matrix cov;
  bool diagonal = true;
  long count = 0;

  static PriorStats standard_normal(int dim);
  int dim() const { return static_cast<int>(mean.size()); }
  // Lower Cholesky factor (diagonal sqrt in diagonal mode). Throws
  // NumericDomainError when a variance is not strictly positive.
  Matrix cholesky() const;
  // rows x dim draws, mean + L u for unit-normal rows u.
  Matrix transform_unit_draws(const Matrix& unit) const;
};

// z = mean + exp(log_var / 2) * noise.
Eigen::RowVectorXd reparameterize(const LatentGaussian& q, const Eigen::RowVectorXd& noise);
Var reparameterize(Var mean, Var log_var, const Matrix& noise);

// Closed-form KL(q || p) for a diagonal q and a prior in either mode.
double gaussian_kl(const LatentGaussian& q, const PriorStats& p);
// Batch mean of KL(q_i || p) where row i of mean/log_var parameterizes q_i.
Var gaussian_kl(Var mean, Var log_var, const PriorStats& p);

// Biased (V-statistic) squared MMD with a sum of RBF kernels
// k(x, y) = sum_h exp(-|x - y|^2 / (2 h^2)).
double mmd_biased(const Matrix& xs, const Matrix& ys, const std::vector<double>& bandwidths);
// Same estimator with xs on the tape; ys is a constant sample.
Var mmd_biased(Var xs, const Matrix& ys, const std::vector<double>& bandwidths);

// One-dimensional densities by quadrature, used to study which single
// Gaussian a divergence prefers for a multimodal target.
using LogDensity1d = std::function<double(double)>;

enum class KlDirection {
  reverse,  // KL(q || p), q the fitted Gaussian
  forward,  // KL(p || q)
};

// Composite Simpson integral of the KL integrand over [lo, hi] with `intervals`
// (even) subintervals.
double quadrature_kl(const LogDensity1d& log_q, const LogDensity1d& log_p, double lo, double hi,
                     int intervals = 4000);

struct Gaussian1d {
  double mean = 0.0;
  double stddev = 1.0;
  double divergence = 0.0;
};

// Fits N(mean, stddev^2) to log_p by minimizing the chosen KL direction:
// coarse grid over (mean, log stddev), then repeated local grid refinement.
Gaussian1d fit_gaussian_1d(const LogDensity1d& log_p, KlDirection direction, double lo,
                           double hi);

}  // namespace ate::vae
