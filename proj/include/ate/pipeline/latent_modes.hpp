#pragma once

// Gaussian-mixture summary of a latent cloud and the assignment of other
// latents to its components by Mahalanobis radius.

#include <cstdint>
#include <vector>

#include "ate/diff/param_store.hpp"
#include "ate/rng.hpp"

namespace ate::pipeline {

using diff::Matrix;

struct MixtureComponent {
  double weight = 0.0;
  Eigen::RowVectorXd mean;
  Matrix cov;
};

struct Mixture {
  std::vector<MixtureComponent> components;
  double log_likelihood = 0.0;  // mean per point at the last EM iteration

  Eigen::RowVectorXd overall_mean() const;
};

// EM with full covariances. Initial means are chosen by farthest-point
// seeding from a random start; covariances get reg * I added each M step.
Mixture fit_mixture(const Matrix& points, int components, uint64_t seed, int iterations = 200,
                    double reg = 1e-6);

double mahalanobis(const Eigen::RowVectorXd& x, const MixtureComponent& c);

struct ModeHistogram {
  std::vector<long> per_component;  // points within the radius of exactly that component
  long none = 0;                    // within no radius
  long multiple = 0;                // within the radius of two or more
  long total = 0;

  double exactly_one_fraction() const;
  // Largest single-component share of all points.
  double dominant_fraction() const;
};

ModeHistogram assign_modes(const Mixture& mixture, const Matrix& points, double radius = 3.0);

}  // namespace ate::pipeline
