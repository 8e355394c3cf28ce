#pragma once

// Latent guidance for policy fine-tuning. The frozen adaptation encoder
// defines an energy ||E(a_noisy) - E(a_clean)||^2 whose negative gradient
// steers the noise or velocity target of the generator during training.

#include <functional>
#include <string>

#include "ate/policy/policy_net.hpp"
#include "ate/vae/action_vae.hpp"

namespace ate::guidance {

using diff::Matrix;
using diff::ParamStore;
using diff::Tape;
using diff::Var;

enum class StepScaling { constant, linear_in_noise_level, cosine };
const char* to_string(StepScaling s);
StepScaling step_scaling_from_string(const std::string& s);

struct GuidanceConfig {
  double scale = 0.1;
  StepScaling step_scaling = StepScaling::constant;
  // Relative std of the clean-latent perturbation: the noise std for sample i
  // is perturbation_std * |z_clean_i| / sqrt(d). Zero disables it.
  double perturbation_std = 0.0;
  double tau_min = 0.02;

  void validate() const;
};

// Differentiable map from flattened chunks (batch x input_dim) to latent
// means (batch x latent_dim). Parameters behind it are never updated here.
struct LatentEncoder {
  int input_dim = 0;
  int latent_dim = 0;
  std::function<Var(Tape&, Var)> map;

  // E(x) = W x with W of shape latent_dim x input_dim.
  static LatentEncoder linear(Matrix w);
  // Posterior means of a VAE encoder; the store must outlive the encoder.
  static LatentEncoder vae_means(const vae::ActionVae& vae, const ParamStore& store);

  // Plain evaluation on a frozen tape.
  Matrix encode(const Matrix& flat) const;
};

struct GuidanceTerm {
  Matrix g;                  // batch x input_dim
  Eigen::VectorXd distance;  // per-sample |E(a_noisy) - E(a_clean)|^2, before perturbation

  double mean_distance() const { return distance.size() == 0 ? 0.0 : distance.mean(); }
};

// g = -grad_{a_noisy} |E(a_noisy) - (E(a_clean) + perturbation)|^2, one row
// per sample. perturb_unit is batch x latent_dim standard normal noise, or an
// empty matrix when perturbation_std is zero.
GuidanceTerm guidance_gradient(const LatentEncoder& enc, const Matrix& a_noisy,
                               const Matrix& a_clean, const Matrix& perturb_unit = Matrix(),
                               double perturbation_std = 0.0);

// Tweedie: grad log p(a_k) = -eps_hat / sqrt(1 - alpha_bar_k).
Matrix score_from_noise(const Matrix& eps_hat, int k, const policy::NoiseSchedule& sched);
// eps_hat - sqrt(1 - alpha_bar_k) * scale * g. Returns eps_hat untouched when scale is zero.
Matrix calibrated_noise(const Matrix& eps_hat, const Matrix& g, int k,
                        const policy::NoiseSchedule& sched, double scale);

// v = x / tau + (1 - tau) / tau * score on the path tau * a0 + (1 - tau) * eps.
Matrix velocity_from_score(const Matrix& score, const Matrix& x, double tau);
// Inverse of velocity_from_score; undefined at tau = 1 where the score drops out.
Matrix score_from_velocity(const Matrix& v, const Matrix& x, double tau);

// v_hat + (1 - tau) / tau * scale * g with tau clamped below at tau_min.
// Clamping is counted in *clamped when given.
Matrix calibrated_velocity(const Matrix& v_hat, const Matrix& g, double tau, double scale,
                           double tau_min = 0.02, long* clamped = nullptr);

// Multiplier in [0, 1] applied to the guidance at a generation step. Progress
// runs from 0 at pure noise to 1 at the data end.
double step_scaling(int k, const policy::NoiseSchedule& sched, StepScaling mode);
double step_scaling(double tau, StepScaling mode);

struct SteeredLoss {
  Var loss;
  double mean_distance = 0.0;  // zero when the guidance was not evaluated
  long clamped = 0;            // flow only: samples with tau below tau_min
};

// |eps - eps_theta(a_k) + sqrt(1 - alpha_bar_k) * scale * s(k) * g|^2 averaged over the
// batch, with g evaluated on the corrupted chunk and held constant. With scale zero
// the tape is identical to policy::diffusion_loss.
SteeredLoss steered_diffusion_loss(Tape& tape, const policy::PolicyNet& net, const ParamStore& store,
                                   const policy::PolicyBatch& batch,
                                   const policy::NoiseSchedule& sched,
                                   const policy::DiffusionNoise& noise, const LatentEncoder& enc,
                                   const GuidanceConfig& cfg, const Matrix& perturb_unit = Matrix());

// |v_theta(a_tau) + (1 - tau) / tau * scale * s(tau) * g - (a0 - eps)|^2 averaged over the batch.
SteeredLoss steered_flow_loss(Tape& tape, const policy::PolicyNet& net, const ParamStore& store,
                              const policy::PolicyBatch& batch, const policy::FlowNoise& noise,
                              const LatentEncoder& enc, const GuidanceConfig& cfg,
                              const Matrix& perturb_unit = Matrix());

}  // namespace ate::guidance
