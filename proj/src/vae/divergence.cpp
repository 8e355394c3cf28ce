#include "ate/vae/divergence.hpp"

#include <cmath>
#include <limits>

#include "ate/diff/ops.hpp"
#include "ate/errors.hpp"

namespace ate::vae {
namespace {

void check_prior(const PriorStats& p, Eigen::Index dim, std::string_view op) {
  diff::check_dims(p.dim() == dim && p.cov.rows() == dim && p.cov.cols() == dim, op,
                   "prior has dim " + std::to_string(p.dim()) + ", latent has " +
                       std::to_string(dim));
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (!(p.cov(i, i) > 0.0)) {
      throw NumericDomainError(std::string(op) + ": prior variance " + std::to_string(i) +
                               " is not positive");
    }
  }
}

// Per-row KL terms and the pieces the gradient needs.
struct KlParts {
  Eigen::VectorXd values;     // one per row
  Matrix precision_diff;      // rows x d, Sigma^-1 (m - mu)
  Eigen::RowVectorXd inv_diag;  // diag(Sigma^-1)
};

KlParts kl_rows(const Matrix& mean, const Matrix& log_var, const PriorStats& p) {
  const Eigen::Index d = mean.cols();
  KlParts out;
  out.values.resize(mean.rows());
  Matrix diff = mean.rowwise() - p.mean;
  double log_det = 0.0;
  if (p.diagonal) {
    Eigen::RowVectorXd var = p.cov.diagonal().transpose();
    out.inv_diag = var.cwiseInverse();
    out.precision_diff = diff.array().rowwise() * out.inv_diag.array();
    log_det = var.array().log().sum();
  } else {
    Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(p.cov)};
    if (llt.info() != Eigen::Success) {
      throw NumericDomainError("gaussian_kl: prior covariance is not positive definite");
    }
    Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    out.inv_diag = inv.diagonal().transpose();
    out.precision_diff = diff * inv;
    log_det = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  }
  for (Eigen::Index r = 0; r < mean.rows(); ++r) {
    double trace = (log_var.row(r).array().exp() * out.inv_diag.array()).sum();
    double maha = diff.row(r).dot(out.precision_diff.row(r));
    out.values(r) =
        0.5 * (trace + maha - static_cast<double>(d) + log_det - log_var.row(r).sum());
  }
  return out;
}

double rbf_sum(double sq_dist, const std::vector<double>& bandwidths) {
  double k = 0.0;
  for (double h : bandwidths) k += std::exp(-sq_dist / (2.0 * h * h));
  return k;
}

// Sum over h of k_h / h^2, the factor in dk/dx = -(x - y) * factor.
double rbf_slope(double sq_dist, const std::vector<double>& bandwidths) {
  double s = 0.0;
  for (double h : bandwidths) s += std::exp(-sq_dist / (2.0 * h * h)) / (h * h);
  return s;
}

double mean_kernel(const Matrix& a, const Matrix& b, const std::vector<double>& bandwidths) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      total += rbf_sum((a.row(i) - b.row(j)).squaredNorm(), bandwidths);
    }
  }
  return total / static_cast<double>(a.rows() * b.rows());
}

void check_mmd_inputs(const Matrix& xs, const Matrix& ys, const std::vector<double>& bandwidths) {
  diff::check_dims(xs.cols() == ys.cols(), "mmd_biased",
                   "sample dims differ: " + std::to_string(xs.cols()) + " vs " +
                       std::to_string(ys.cols()));
  if (xs.rows() == 0 || ys.rows() == 0) throw UsageError("mmd_biased: empty sample set");
  if (bandwidths.empty()) throw UsageError("mmd_biased: no kernel bandwidths");
  for (double h : bandwidths) {
    if (!(h > 0.0) || !std::isfinite(h)) {
      throw NumericDomainError("mmd_biased: bandwidth must be positive and finite");
    }
  }
}

}  // namespace

PriorStats PriorStats::standard_normal(int dim) {
  PriorStats p;
  p.mean = Eigen::RowVectorXd::Zero(dim);
  p.cov = Matrix::Identity(dim, dim);
  p.diagonal = true;
  return p;
}

Matrix PriorStats::cholesky() const {
  const int d = dim();
  for (int i = 0; i < d; ++i) {
    if (!(cov(i, i) > 0.0)) throw NumericDomainError("prior variance is not positive");
  }
  if (diagonal) return Matrix(cov.diagonal().cwiseSqrt().asDiagonal());
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(cov)};
  if (llt.info() != Eigen::Success) {
    throw NumericDomainError("prior covariance is not positive definite");
  }
  return Matrix(llt.matrixL());
}

Matrix PriorStats::transform_unit_draws(const Matrix& unit) const {
  diff::check_dims(unit.cols() == dim(), "prior draws",
                   "expected " + std::to_string(dim()) + " columns");
  if (diagonal) {
    Eigen::RowVectorXd sd = cov.diagonal().cwiseSqrt().transpose();
    return (unit.array().rowwise() * sd.array()).rowwise() + mean.array();
  }
  Matrix l = cholesky();
  Matrix out = unit * l.transpose();
  return out.rowwise() + mean;
}

Eigen::RowVectorXd reparameterize(const LatentGaussian& q, const Eigen::RowVectorXd& noise) {
  diff::check_dims(noise.size() == q.mean.size() && q.log_var.size() == q.mean.size(),
                   "reparameterize", "noise and posterior dims differ");
  return q.mean.array() + q.stddev().array() * noise.array();
}

Var reparameterize(Var mean, Var log_var, const Matrix& noise) {
  diff::check_dims(mean.rows() == noise.rows() && mean.cols() == noise.cols() &&
                       log_var.rows() == noise.rows() && log_var.cols() == noise.cols(),
                   "reparameterize", "noise shape differs from posterior");
  Tape& tape = *mean.tape;
  Var sd = diff::exp(diff::scale(log_var, 0.5));
  return diff::add(mean, diff::mul(sd, tape.constant(noise)));
}

double gaussian_kl(const LatentGaussian& q, const PriorStats& p) {
  check_prior(p, q.mean.size(), "gaussian_kl");
  Matrix m = q.mean;
  Matrix lv = q.log_var;
  return kl_rows(m, lv, p).values(0);
}

Var gaussian_kl(Var mean, Var log_var, const PriorStats& p) {
  diff::check_dims(mean.rows() == log_var.rows() && mean.cols() == log_var.cols(), "gaussian_kl",
                   "mean and log_var shapes differ");
  check_prior(p, mean.cols(), "gaussian_kl");
  KlParts parts = kl_rows(mean.value(), log_var.value(), p);
  const double batch = static_cast<double>(mean.rows());
  Matrix out(1, 1);
  out(0, 0) = parts.values.sum() / batch;
  Matrix var = log_var.value().array().exp();
  Eigen::RowVectorXd inv_diag = parts.inv_diag;
  Matrix precision_diff = std::move(parts.precision_diff);
  int m_id = mean.id, lv_id = log_var.id;
  Tape& tape = *mean.tape;
  return tape.push(std::move(out), "gaussian_kl", {mean, log_var},
                   [m_id, lv_id, batch, var = std::move(var), inv_diag,
                    precision_diff = std::move(precision_diff)](Tape& t, int self) {
                     const double g = t.grad_ref(self)(0, 0) / batch;
                     if (t.requires_grad(m_id)) t.grad_ref(m_id) += g * precision_diff;
                     if (t.requires_grad(lv_id)) {
                       Matrix d = 0.5 * ((var.array().rowwise() * inv_diag.array()) - 1.0);
                       t.grad_ref(lv_id) += g * d;
                     }
                   });
}

double mmd_biased(const Matrix& xs, const Matrix& ys, const std::vector<double>& bandwidths) {
  check_mmd_inputs(xs, ys, bandwidths);
  double v = mean_kernel(xs, xs, bandwidths) + mean_kernel(ys, ys, bandwidths) -
             2.0 * mean_kernel(xs, ys, bandwidths);
  return std::max(v, 0.0);
}

Var mmd_biased(Var xs, const Matrix& ys, const std::vector<double>& bandwidths) {
  const Matrix& x = xs.value();
  check_mmd_inputs(x, ys, bandwidths);
  double v = mean_kernel(x, x, bandwidths) + mean_kernel(ys, ys, bandwidths) -
             2.0 * mean_kernel(x, ys, bandwidths);
  Matrix out(1, 1);
  out(0, 0) = std::max(v, 0.0);
  int x_id = xs.id;
  Tape& tape = *xs.tape;
  return tape.push(std::move(out), "mmd_biased", {xs},
                   [x_id, x, ys, bandwidths](Tape& t, int self) {
                     if (!t.requires_grad(x_id)) return;
                     const double g = t.grad_ref(self)(0, 0);
                     const double n = static_cast<double>(x.rows());
                     const double m = static_cast<double>(ys.rows());
                     Matrix dx = Matrix::Zero(x.rows(), x.cols());
                     for (Eigen::Index a = 0; a < x.rows(); ++a) {
                       for (Eigen::Index j = 0; j < x.rows(); ++j) {
                         if (j == a) continue;
                         auto diff = x.row(a) - x.row(j);
                         dx.row(a) -= (2.0 / (n * n)) *
                                      rbf_slope(diff.squaredNorm(), bandwidths) * diff;
                       }
                       for (Eigen::Index j = 0; j < ys.rows(); ++j) {
                         auto diff = x.row(a) - ys.row(j);
                         dx.row(a) += (2.0 / (n * m)) *
                                      rbf_slope(diff.squaredNorm(), bandwidths) * diff;
                       }
                     }
                     t.grad_ref(x_id) += g * dx;
                   });
}

}  // namespace ate::vae

namespace ate::vae {
namespace {

double normal_log_pdf(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return -0.5 * u * u - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
}

}  // namespace

double quadrature_kl(const LogDensity1d& log_q, const LogDensity1d& log_p, double lo, double hi,
                     int intervals) {
  if (!(hi > lo)) throw UsageError("quadrature_kl: empty interval");
  if (intervals < 2 || intervals % 2 != 0) {
    throw UsageError("quadrature_kl: interval count must be even and at least 2");
  }
  const double step = (hi - lo) / intervals;
  double total = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    const double x = lo + step * i;
    const double lq = log_q(x);
    double f = 0.0;
    if (std::isfinite(lq)) f = std::exp(lq) * (lq - log_p(x));
    const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    total += w * f;
  }
  return total * step / 3.0;
}

Gaussian1d fit_gaussian_1d(const LogDensity1d& log_p, KlDirection direction, double lo,
                           double hi) {
  auto objective = [&](double mean, double log_sd) {
    const double sd = std::exp(log_sd);
    LogDensity1d log_q = [mean, sd](double x) { return normal_log_pdf(x, mean, sd); };
    return direction == KlDirection::reverse ? quadrature_kl(log_q, log_p, lo, hi)
                                             : quadrature_kl(log_p, log_q, lo, hi);
  };
  double best_m = 0.0, best_s = 0.0;
  double best = std::numeric_limits<double>::infinity();
  double span_m = 0.5 * (hi - lo), span_s = 3.0;
  double center_m = 0.5 * (lo + hi), center_s = 0.0;
  constexpr int kGrid = 24;
  for (int round = 0; round < 14; ++round) {
    for (int i = 0; i <= kGrid; ++i) {
      const double m = center_m - span_m + 2.0 * span_m * i / kGrid;
      for (int j = 0; j <= kGrid; ++j) {
        const double s = center_s - span_s + 2.0 * span_s * j / kGrid;
        const double v = objective(m, s);
        if (v < best) {
          best = v;
          best_m = m;
          best_s = s;
        }
      }
    }
    center_m = best_m;
    center_s = best_s;
    span_m *= 0.25;
    span_s *= 0.25;
  }
  return {best_m, std::exp(best_s), best};
}

}  // namespace ate::vae
