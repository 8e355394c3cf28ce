#include "ate/guidance/guidance.hpp"

#include <cmath>
#include <numbers>

#include "ate/diff/ops.hpp"
#include "ate/errors.hpp"

namespace ate::guidance {

using diff::check_dims;

const char* to_string(StepScaling s) {
  switch (s) {
    case StepScaling::constant: return "constant";
    case StepScaling::linear_in_noise_level: return "linear_in_noise_level";
    case StepScaling::cosine: return "cosine";
  }
  return "constant";
}

StepScaling step_scaling_from_string(const std::string& s) {
  if (s == "constant") return StepScaling::constant;
  if (s == "linear_in_noise_level") return StepScaling::linear_in_noise_level;
  if (s == "cosine") return StepScaling::cosine;
  throw ConfigError("unknown step scaling '" + s +
                    "' (expected constant, linear_in_noise_level or cosine)");
}

void GuidanceConfig::validate() const {
  if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("guidance: scale must be >= 0");
  if (!(perturbation_std >= 0.0)) throw ConfigError("guidance: perturbation_std must be >= 0");
  if (!(tau_min > 0.0 && tau_min < 1.0)) throw ConfigError("guidance: tau_min must lie in (0, 1)");
}

LatentEncoder LatentEncoder::linear(Matrix w) {
  LatentEncoder e;
  e.latent_dim = static_cast<int>(w.rows());
  e.input_dim = static_cast<int>(w.cols());
  Matrix wt = w.transpose();
  e.map = [wt = std::move(wt)](Tape& tape, Var x) { return diff::matmul(x, tape.constant(wt)); };
  return e;
}

LatentEncoder LatentEncoder::vae_means(const vae::ActionVae& vae, const ParamStore& store) {
  const vae::VaeConfig& c = vae.config();
  LatentEncoder e;
  e.input_dim = c.chunk_len * c.action_dim;
  e.latent_dim = c.latent_dim;
  e.map = [&vae, &store, h = c.chunk_len, d = c.action_dim](Tape& tape, Var x) {
    const Eigen::Index batch = x.rows();
    Var rows = diff::reshape(x, batch * h, d);
    return vae.encode(tape, store, rows, static_cast<int>(batch)).mean;
  };
  return e;
}

Matrix LatentEncoder::encode(const Matrix& flat) const {
  check_dims(flat.cols() == input_dim, "encoder",
             "expected chunk width " + std::to_string(input_dim) + ", got " +
                 std::to_string(flat.cols()));
  Tape tape;
  tape.set_params_frozen(true);
  return map(tape, tape.constant(flat)).value();
}

GuidanceTerm guidance_gradient(const LatentEncoder& enc, const Matrix& a_noisy,
                               const Matrix& a_clean, const Matrix& perturb_unit,
                               double perturbation_std) {
  check_dims(a_noisy.rows() == a_clean.rows() && a_noisy.cols() == a_clean.cols(), "guidance",
             "noisy and clean chunks differ in shape");
  check_dims(a_noisy.cols() == enc.input_dim, "guidance",
             "expected chunk width " + std::to_string(enc.input_dim) + ", got " +
                 std::to_string(a_noisy.cols()));
  Matrix target = enc.encode(a_clean);
  Tape tape;
  tape.set_params_frozen(true);
  Var x = tape.variable(a_noisy);
  Var z = enc.map(tape, x);

  GuidanceTerm out;
  out.distance = (z.value() - target).rowwise().squaredNorm();
  if (perturbation_std > 0.0) {
    check_dims(perturb_unit.rows() == target.rows() && perturb_unit.cols() == target.cols(),
               "guidance", "perturbation noise must be batch x latent_dim");
    const double root_d = std::sqrt(static_cast<double>(target.cols()));
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
      target.row(i) += perturbation_std * target.row(i).norm() / root_d * perturb_unit.row(i);
    }
  }
  Var dist = diff::sum(diff::square(diff::sub(z, tape.constant(target))));
  tape.backward(dist);
  out.g = -tape.grad(x);
  return out;
}

Matrix score_from_noise(const Matrix& eps_hat, int k, const policy::NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(k);
  if (!(ab < 1.0)) throw NumericDomainError("score_from_noise: alpha_bar is 1, the score is singular");
  return -eps_hat / std::sqrt(1.0 - ab);
}

Matrix calibrated_noise(const Matrix& eps_hat, const Matrix& g, int k,
                        const policy::NoiseSchedule& sched, double scale) {
  check_dims(eps_hat.rows() == g.rows() && eps_hat.cols() == g.cols(), "calibrated_noise",
             "guidance shape differs from the prediction");
  if (scale == 0.0) return eps_hat;
  return eps_hat - std::sqrt(1.0 - sched.alpha_bar(k)) * scale * g;
}

Matrix velocity_from_score(const Matrix& score, const Matrix& x, double tau) {
  check_dims(score.rows() == x.rows() && score.cols() == x.cols(), "velocity_from_score",
             "score shape differs from the sample");
  if (!(tau > 0.0 && tau <= 1.0)) throw NumericDomainError("velocity_from_score: tau outside (0, 1]");
  return x / tau + ((1.0 - tau) / tau) * score;
}

Matrix score_from_velocity(const Matrix& v, const Matrix& x, double tau) {
  check_dims(v.rows() == x.rows() && v.cols() == x.cols(), "score_from_velocity",
             "velocity shape differs from the sample");
  if (!(tau > 0.0 && tau < 1.0)) throw NumericDomainError("score_from_velocity: tau outside (0, 1)");
  return (tau * v - x) / (1.0 - tau);
}

Matrix calibrated_velocity(const Matrix& v_hat, const Matrix& g, double tau, double scale,
                           double tau_min, long* clamped) {
  check_dims(v_hat.rows() == g.rows() && v_hat.cols() == g.cols(), "calibrated_velocity",
             "guidance shape differs from the prediction");
  if (tau < tau_min) {
    tau = tau_min;
    if (clamped) ++*clamped;
  }
  if (scale == 0.0) return v_hat;
  return v_hat + ((1.0 - tau) / tau) * scale * g;
}

namespace {

double progress_scaling(double progress, double noise_level, StepScaling mode) {
  switch (mode) {
    case StepScaling::constant: return 1.0;
    case StepScaling::linear_in_noise_level: return noise_level;
    case StepScaling::cosine: {
      const double c = std::cos(0.5 * std::numbers::pi * progress);
      return c * c;
    }
  }
  return 1.0;
}

}  // namespace

double step_scaling(int k, const policy::NoiseSchedule& sched, StepScaling mode) {
  const int steps = sched.steps();
  const double top = std::sqrt(1.0 - sched.alpha_bar(steps));
  const double level = k == 0 ? 0.0 : std::sqrt(1.0 - sched.alpha_bar(k)) / top;
  return progress_scaling(static_cast<double>(steps - k) / steps, level, mode);
}

double step_scaling(double tau, StepScaling mode) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("step_scaling: tau outside [0, 1]");
  return progress_scaling(tau, 1.0 - tau, mode);
}

SteeredLoss steered_diffusion_loss(Tape& tape, const policy::PolicyNet& net,
                                   const ParamStore& store, const policy::PolicyBatch& batch,
                                   const policy::NoiseSchedule& sched,
                                   const policy::DiffusionNoise& noise, const LatentEncoder& enc,
                                   const GuidanceConfig& cfg, const Matrix& perturb_unit) {
  const int k_total = sched.steps();
  std::vector<double> times;
  for (int k : noise.steps) times.push_back(policy::diffusion_time(k, k_total));
  Matrix noisy = policy::corrupt_batch(batch.chunks, noise, sched);
  SteeredLoss out;
  Matrix target = noise.eps;
  if (cfg.scale != 0.0) {
    GuidanceTerm term = guidance_gradient(enc, noisy, batch.chunks, perturb_unit, cfg.perturbation_std);
    out.mean_distance = term.mean_distance();
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
      const int k = noise.steps[static_cast<std::size_t>(i)];
      const double c =
          std::sqrt(1.0 - sched.alpha_bar(k)) * cfg.scale * step_scaling(k, sched, cfg.step_scaling);
      target.row(i) += c * term.g.row(i);
    }
  }
  Var eps_hat = net.forward(tape, store, tape.constant(std::move(noisy)), times, batch.obs,
                            batch.tasks);
  Var resid = diff::sub(tape.constant(std::move(target)), eps_hat);
  out.loss = diff::scale(diff::sum(diff::square(resid)), 1.0 / batch.size());
  return out;
}

SteeredLoss steered_flow_loss(Tape& tape, const policy::PolicyNet& net, const ParamStore& store,
                              const policy::PolicyBatch& batch, const policy::FlowNoise& noise,
                              const LatentEncoder& enc, const GuidanceConfig& cfg,
                              const Matrix& perturb_unit) {
  Matrix noisy = policy::corrupt_batch(batch.chunks, noise);
  SteeredLoss out;
  Matrix target = batch.chunks - noise.eps;
  if (cfg.scale != 0.0) {
    GuidanceTerm term = guidance_gradient(enc, noisy, batch.chunks, perturb_unit, cfg.perturbation_std);
    out.mean_distance = term.mean_distance();
    for (Eigen::Index i = 0; i < target.rows(); ++i) {
      double tau = noise.taus[static_cast<std::size_t>(i)];
      if (tau < cfg.tau_min) {
        tau = cfg.tau_min;
        ++out.clamped;
      }
      const double c = (1.0 - tau) / tau * cfg.scale * step_scaling(tau, cfg.step_scaling);
      target.row(i) -= c * term.g.row(i);
    }
  }
  Var v = net.forward(tape, store, tape.constant(std::move(noisy)), noise.taus, batch.obs,
                      batch.tasks);
  Var resid = diff::sub(v, tape.constant(std::move(target)));
  out.loss = diff::scale(diff::sum(diff::square(resid)), 1.0 / batch.size());
  return out;
}

}  // namespace ate::guidance
