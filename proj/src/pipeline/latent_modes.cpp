#include "ate/pipeline/latent_modes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ate/errors.hpp"

namespace ate::pipeline {

Eigen::RowVectorXd Mixture::overall_mean() const {
  Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(components.front().mean.size());
  for (const auto& c : components) m += c.weight * c.mean;
  return m;
}

Mixture fit_mixture(const Matrix& points, int components, uint64_t seed, int iterations,
                    double reg) {
  const Eigen::Index n = points.rows();
  const Eigen::Index d = points.cols();
  if (components < 1 || n < components) {
    throw UsageError("fit_mixture: need at least as many points as components");
  }
  Rng rng(seed);
  std::vector<Eigen::Index> centers{static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(n)))};
  while (static_cast<int>(centers.size()) < components) {
    Eigen::Index best = 0;
    double best_dist = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double nearest = INFINITY;
      for (Eigen::Index c : centers) nearest = std::min(nearest, (points.row(i) - points.row(c)).squaredNorm());
      if (nearest > best_dist) {
        best_dist = nearest;
        best = i;
      }
    }
    centers.push_back(best);
  }

  const Eigen::RowVectorXd global_mean = points.colwise().mean();
  const Matrix centered = points.rowwise() - global_mean;
  const Matrix global_cov = centered.transpose() * centered / static_cast<double>(n);

  Mixture mix;
  for (Eigen::Index c : centers) {
    mix.components.push_back({1.0 / components, points.row(c),
                              global_cov + reg * Matrix::Identity(d, d)});
  }

  Matrix resp(n, components);
  for (int it = 0; it < iterations; ++it) {
    // E step in log space.
    double total_ll = 0.0;
    for (int k = 0; k < components; ++k) {
      const auto& comp = mix.components[static_cast<std::size_t>(k)];
      Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(comp.cov)};
      const Eigen::MatrixXd l = llt.matrixL();
      const double log_det = 2.0 * l.diagonal().array().log().sum();
      const double norm = std::log(comp.weight) - 0.5 * (d * std::log(2 * std::numbers::pi) + log_det);
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd diff = (points.row(i) - comp.mean).transpose();
        const double q = llt.matrixL().solve(diff).squaredNorm();
        resp(i, k) = norm - 0.5 * q;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mx = resp.row(i).maxCoeff();
      const double lse = mx + std::log((resp.row(i).array() - mx).exp().sum());
      total_ll += lse;
      resp.row(i) = (resp.row(i).array() - lse).exp();
    }
    mix.log_likelihood = total_ll / static_cast<double>(n);
    // M step.
    for (int k = 0; k < components; ++k) {
      auto& comp = mix.components[static_cast<std::size_t>(k)];
      const double nk = std::max(resp.col(k).sum(), 1e-12);
      comp.weight = nk / static_cast<double>(n);
      comp.mean = (resp.col(k).transpose() * points) / nk;
      Matrix c = points.rowwise() - comp.mean;
      comp.cov = (c.array().colwise() * resp.col(k).array()).matrix().transpose() * c / nk +
                 reg * Matrix::Identity(d, d);
    }
  }
  // Stable component order: by first coordinate of the mean.
  std::sort(mix.components.begin(), mix.components.end(),
            [](const MixtureComponent& a, const MixtureComponent& b) {
              for (Eigen::Index j = 0; j < a.mean.size(); ++j) {
                if (a.mean(j) != b.mean(j)) return a.mean(j) < b.mean(j);
              }
              return false;
            });
  return mix;
}

double mahalanobis(const Eigen::RowVectorXd& x, const MixtureComponent& c) {
  Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(c.cov)};
  if (llt.info() != Eigen::Success) throw NumericDomainError("mahalanobis: covariance is not positive definite");
  Eigen::VectorXd diff = (x - c.mean).transpose();
  return std::sqrt(llt.matrixL().solve(diff).squaredNorm());
}

double ModeHistogram::exactly_one_fraction() const {
  long one = 0;
  for (long c : per_component) one += c;
  return total == 0 ? 0.0 : static_cast<double>(one) / static_cast<double>(total);
}

double ModeHistogram::dominant_fraction() const {
  long best = 0;
  for (long c : per_component) best = std::max(best, c);
  return total == 0 ? 0.0 : static_cast<double>(best) / static_cast<double>(total);
}

ModeHistogram assign_modes(const Mixture& mixture, const Matrix& points, double radius) {
  ModeHistogram h;
  h.per_component.assign(mixture.components.size(), 0);
  h.total = points.rows();
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    int inside = 0;
    std::size_t which = 0;
    for (std::size_t k = 0; k < mixture.components.size(); ++k) {
      if (mahalanobis(points.row(i), mixture.components[k]) <= radius) {
        ++inside;
        which = k;
      }
    }
    if (inside == 0) ++h.none;
    else if (inside == 1) ++h.per_component[which];
    else ++h.multiple;
  }
  return h;
}

}  // namespace ate::pipeline
