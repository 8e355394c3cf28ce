#include <doctest.h>

#include <cmath>

#include "ate/diff/grad_check.hpp"
#include "ate/errors.hpp"
#include "ate/guidance/guidance.hpp"
#include "support/toys.hpp"

using namespace ate;
using namespace ate::guidance;
using policy::NoiseSchedule;

namespace {

Matrix normal_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  return m;
}

void randomize(diff::ParamStore& store, Rng& rng, double sd) {
  std::vector<std::string> names;
  for (const auto& [name, value] : store) names.push_back(name);
  for (const auto& name : names) {
    const Matrix& v = store.at(name);
    store.assign(name, sd * normal_matrix(rng, v.rows(), v.cols()));
  }
}

vae::VaeConfig tiny_vae() {
  vae::VaeConfig c;
  c.latent_dim = 3;
  c.chunk_len = 4;
  c.action_dim = 2;
  c.depth = 1;
  c.width = 8;
  c.heads = 2;
  c.ffn_hidden = 8;
  return c;
}

policy::PolicyConfig policy_for(const vae::VaeConfig& v) {
  policy::PolicyConfig c;
  c.chunk_len = v.chunk_len;
  c.action_dim = v.action_dim;
  c.obs_dim = 3;
  c.num_tasks = 2;
  c.width = 8;
  c.blocks = 1;
  c.time_dim = 4;
  c.task_dim = 2;
  return c;
}

policy::PolicyBatch random_batch(Rng& rng, const policy::PolicyConfig& c, int n) {
  policy::PolicyBatch b;
  b.chunks = normal_matrix(rng, n, c.flat_dim());
  b.obs = normal_matrix(rng, n, c.obs_dim);
  for (int i = 0; i < n; ++i) b.tasks.push_back(static_cast<int>(rng.below(c.num_tasks)));
  return b;
}

double distance(const LatentEncoder& enc, const Matrix& a, const Matrix& target) {
  return (enc.encode(a) - target).squaredNorm();
}

}  // namespace

TEST_CASE("guidance vanishes at its minimum") {
  diff::ParamStore store(1);
  vae::ActionVae v = vae::ActionVae::create(tiny_vae(), store);
  LatentEncoder enc = LatentEncoder::vae_means(v, store);
  Rng rng(2);
  Matrix a = normal_matrix(rng, 5, enc.input_dim);
  GuidanceTerm t = guidance_gradient(enc, a, a);
  CHECK(t.g.cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.distance.cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.g.rows() == 5);
  CHECK(t.g.cols() == enc.input_dim);
}

TEST_CASE("linear encoder gives the closed form -2 W^T W (a_noisy - a_clean)") {
  Rng rng(3);
  Matrix w = normal_matrix(rng, 3, 7);
  LatentEncoder enc = LatentEncoder::linear(w);
  Matrix noisy = normal_matrix(rng, 4, 7);
  Matrix clean = normal_matrix(rng, 4, 7);
  GuidanceTerm t = guidance_gradient(enc, noisy, clean);
  Matrix expect = -2.0 * (noisy - clean) * w.transpose() * w;
  CHECK((t.g - expect).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(t.distance(i) == doctest::Approx((w * (noisy - clean).row(i).transpose()).squaredNorm()));
  }
}

TEST_CASE("guidance gradient matches finite differences through the VAE encoder") {
  Rng rng(4);
  for (int inst = 0; inst < 5; ++inst) {
    diff::ParamStore store(100 + inst);
    vae::ActionVae v = vae::ActionVae::create(tiny_vae(), store);
    randomize(store, rng, 0.5);
    LatentEncoder enc = LatentEncoder::vae_means(v, store);
    Matrix noisy = normal_matrix(rng, 2, enc.input_dim);
    Matrix clean = normal_matrix(rng, 2, enc.input_dim);
    const Matrix target = enc.encode(clean);
    GuidanceTerm t = guidance_gradient(enc, noisy, clean);
    Matrix numeric(noisy.rows(), noisy.cols());
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < noisy.size(); ++i) {
      Matrix up = noisy, down = noisy;
      up.data()[i] += h;
      down.data()[i] -= h;
      numeric.data()[i] = -(distance(enc, up, target) - distance(enc, down, target)) / (2 * h);
    }
    const double err = (t.g - numeric).cwiseAbs().maxCoeff() / (numeric.cwiseAbs().maxCoeff() + 1e-12);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("guidance rejects mismatched chunk lengths") {
  Rng rng(5);
  LatentEncoder enc = LatentEncoder::linear(normal_matrix(rng, 2, 6));
  CHECK_THROWS_AS(guidance_gradient(enc, normal_matrix(rng, 3, 5), normal_matrix(rng, 3, 5)),
                  DimensionError);
  CHECK_THROWS_AS(guidance_gradient(enc, normal_matrix(rng, 3, 6), normal_matrix(rng, 2, 6)),
                  DimensionError);
}

TEST_CASE("stepping along g lowers the latent distance") {
  diff::ParamStore store(6);
  vae::ActionVae v = vae::ActionVae::create(tiny_vae(), store);
  Rng rng(7);
  randomize(store, rng, 0.3);
  LatentEncoder enc = LatentEncoder::vae_means(v, store);
  for (double eta : {1e-4, 1e-3}) {
    int ok = 0;
    const int probes = 500;
    for (int p = 0; p < probes; ++p) {
      Matrix noisy = normal_matrix(rng, 1, enc.input_dim);
      Matrix clean = normal_matrix(rng, 1, enc.input_dim);
      const Matrix target = enc.encode(clean);
      GuidanceTerm t = guidance_gradient(enc, noisy, clean);
      ok += distance(enc, noisy + eta * t.g, target) <= distance(enc, noisy, target);
    }
    INFO("eta ", eta);
    CHECK(ok >= 0.99 * probes);
  }
}

TEST_CASE("perturbation moves the target but not the reported distance") {
  Rng rng(8);
  LatentEncoder enc = LatentEncoder::linear(normal_matrix(rng, 3, 6));
  Matrix a = normal_matrix(rng, 4, 6);
  Matrix unit = normal_matrix(rng, 4, 3);
  GuidanceTerm t = guidance_gradient(enc, a, a, unit, 0.01);
  CHECK(t.distance.cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.g.cwiseAbs().maxCoeff() > 0.0);
  // g = 2 (target - z) W with target - z = 0.01 |z| / sqrt(d) * unit.
  Matrix z = enc.encode(a);
  Matrix w = Matrix(3, 6);
  {
    Matrix eye = Matrix::Identity(6, 6);
    w = enc.encode(eye).transpose();
  }
  for (Eigen::Index i = 0; i < 4; ++i) {
    Eigen::RowVectorXd shift = 0.01 * z.row(i).norm() / std::sqrt(3.0) * unit.row(i);
    CHECK((t.g.row(i) - 2.0 * shift * w).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(guidance_gradient(enc, a, a, Matrix(2, 3), 0.01), DimensionError);
}

TEST_CASE("score from noise and calibrated noise") {
  NoiseSchedule s = NoiseSchedule::from_alphas({0.75});
  Matrix one = Matrix::Constant(1, 1, 1.0);
  CHECK(score_from_noise(Matrix::Zero(2, 2), 1, s).cwiseAbs().maxCoeff() == 0.0);
  CHECK(score_from_noise(one, 1, s)(0, 0) == doctest::Approx(-2.0).epsilon(1e-14));
  CHECK_THROWS_AS(score_from_noise(one, 0, s), NumericDomainError);

  Rng rng(9);
  Matrix eps = normal_matrix(rng, 3, 4);
  Matrix g = normal_matrix(rng, 3, 4);
  CHECK(calibrated_noise(eps, g, 1, s, 0.0) == eps);
  CHECK(calibrated_noise(eps, Matrix::Zero(3, 4), 1, s, 0.7) == eps);
  CHECK(calibrated_noise(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 2.0), 1, s, 1.0)(0, 0) ==
        doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("score-velocity transform: endpoint, round trip, singularities") {
  Rng rng(10);
  Matrix x = normal_matrix(rng, 3, 5);
  Matrix score = normal_matrix(rng, 3, 5);
  CHECK(velocity_from_score(score, x, 1.0) == x);
  for (int i = 0; i < 98; ++i) {
    const double tau = 0.02 + i * 0.01;
    Matrix back = score_from_velocity(velocity_from_score(score, x, tau), x, tau);
    CHECK((back - score).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK_THROWS_AS(velocity_from_score(score, x, 0.0), NumericDomainError);
  CHECK_THROWS_AS(score_from_velocity(score, x, 1.0), NumericDomainError);
}

TEST_CASE("analytic score through the transform matches the Monte-Carlo marginal velocity") {
  Rng rng(11);
  const int n = 1000000;
  Eigen::VectorXd a0(n), eps(n);
  for (int i = 0; i < n; ++i) {
    a0(i) = rng.normal();
    eps(i) = rng.normal();
  }
  for (double tau : {0.25, 0.5, 0.75}) {
    const double var = tau * tau + (1 - tau) * (1 - tau);
    Eigen::VectorXd x = tau * a0 + (1 - tau) * eps;
    Eigen::VectorXd target = a0 - eps;
    // Binned conditional means of a0 - eps given x over +-2 marginal sd.
    const int bins = 20;
    const double half = 2.0 * std::sqrt(var);
    Eigen::VectorXd sum_x = Eigen::VectorXd::Zero(bins), sum_t = Eigen::VectorXd::Zero(bins),
                    count = Eigen::VectorXd::Zero(bins);
    for (int i = 0; i < n; ++i) {
      const int b = static_cast<int>(std::floor((x(i) + half) / (2 * half) * bins));
      if (b < 0 || b >= bins) continue;
      sum_x(b) += x(i);
      sum_t(b) += target(i);
      count(b) += 1;
    }
    Matrix xs(bins, 1);
    for (int b = 0; b < bins; ++b) xs(b, 0) = sum_x(b) / count(b);
    Matrix v = velocity_from_score(-xs / var, xs, tau);
    Eigen::VectorXd mc = sum_t.cwiseQuotient(count);
    // The true velocity is identically zero at tau = 0.5, so errors are taken
    // relative to the RMS of the regression target rather than of the fit.
    const double scale = std::sqrt(target.squaredNorm() / n);
    const double rel = std::sqrt((v.col(0) - mc).squaredNorm() / bins) / scale;
    INFO("tau ", tau, " relative error ", rel);
    CHECK(rel < 0.02);
  }
}

TEST_CASE("both calibration paths add the same guidance to the score") {
  // Matched noise levels: (1 - tau) / tau = sqrt((1 - ab) / ab).
  NoiseSchedule s = NoiseSchedule::standard(50);
  Rng rng(12);
  for (int k : {5, 20, 40}) {
    const double ab = s.alpha_bar(k);
    const double tau = std::sqrt(ab) / (std::sqrt(ab) + std::sqrt(1 - ab));
    Matrix a0 = normal_matrix(rng, 4, 1);
    Matrix e = normal_matrix(rng, 4, 1);
    Matrix xk = std::sqrt(ab) * a0 + std::sqrt(1 - ab) * e;
    Matrix xt = (tau / std::sqrt(ab)) * xk;
    const double var_k = ab + 1 - ab;
    const double var_t = tau * tau + (1 - tau) * (1 - tau);
    Matrix sk = -xk / var_k;
    Matrix st = -xt / var_t;
    CHECK((st * (tau / std::sqrt(ab)) - sk).cwiseAbs().maxCoeff() < 1e-12);
    Matrix g = normal_matrix(rng, 4, 1);
    const double lambda = 0.3;
    Matrix eps_hat = -std::sqrt(1 - ab) * sk;
    Matrix guided_k = score_from_noise(calibrated_noise(eps_hat, g, k, s, lambda), k, s);
    Matrix v = velocity_from_score(st, xt, tau);
    Matrix guided_t = score_from_velocity(calibrated_velocity(v, g, tau, lambda), xt, tau);
    CHECK(((guided_k - sk) - lambda * g).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(((guided_t - st) - lambda * g).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("calibrated velocity and step scaling") {
  Rng rng(13);
  Matrix v = normal_matrix(rng, 2, 3);
  Matrix g = normal_matrix(rng, 2, 3);
  CHECK(calibrated_velocity(v, g, 1.0, 0.8) == v);
  CHECK(calibrated_velocity(v, g, 0.3, 0.0) == v);
  CHECK(calibrated_velocity(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 3.0), 0.5, 1.0)(0, 0) ==
        3.0);
  long clamped = 0;
  Matrix c = calibrated_velocity(v, g, 0.001, 1.0, 0.02, &clamped);
  CHECK(clamped == 1);
  CHECK((c - (v + 49.0 * g)).cwiseAbs().maxCoeff() < 1e-12);

  NoiseSchedule s = NoiseSchedule::standard(50);
  for (int k = 0; k <= 50; ++k) CHECK(step_scaling(k, s, StepScaling::constant) == 1.0);
  CHECK(step_scaling(0, s, StepScaling::linear_in_noise_level) == 0.0);
  CHECK(step_scaling(50, s, StepScaling::linear_in_noise_level) == doctest::Approx(1.0));
  CHECK(step_scaling(50, s, StepScaling::cosine) == 1.0);
  CHECK(step_scaling(0.0, StepScaling::cosine) == 1.0);
  CHECK(step_scaling(1.0, StepScaling::linear_in_noise_level) == 0.0);
  for (int k = 1; k <= 50; ++k) {
    for (StepScaling m : {StepScaling::linear_in_noise_level, StepScaling::cosine}) {
      const double x = step_scaling(k, s, m);
      CHECK((x >= 0.0 && x <= 1.0));
    }
  }
  CHECK_THROWS_AS(step_scaling_from_string("exponential"), ConfigError);
  CHECK(step_scaling_from_string("cosine") == StepScaling::cosine);
}

TEST_CASE("steered losses: zero scale reproduces the baseline losses bitwise") {
  vae::VaeConfig vc = tiny_vae();
  diff::ParamStore enc_store(14);
  vae::ActionVae v = vae::ActionVae::create(vc, enc_store);
  LatentEncoder enc = LatentEncoder::vae_means(v, enc_store);
  policy::PolicyConfig pc = policy_for(vc);
  NoiseSchedule s = NoiseSchedule::standard(25);
  GuidanceConfig zero;
  zero.scale = 0.0;
  Rng data_rng(15);
  policy::PolicyBatch b = random_batch(data_rng, pc, 16);
  for (policy::Family fam : {policy::Family::diffusion, policy::Family::flow}) {
    diff::ParamStore base(16), steered(16);
    policy::PolicyNet net = policy::PolicyNet::create(pc, base);
    policy::PolicyNet::create(pc, steered);
    diff::Adam adam_a(base, diff::AdamConfig{});
    diff::Adam adam_b(steered, diff::AdamConfig{});
    Rng rng_a(17), rng_b(17);
    for (int step = 0; step < 100; ++step) {
      diff::Tape ta, tb;
      diff::Var la, lb;
      if (fam == policy::Family::diffusion) {
        la = policy::diffusion_loss(ta, net, base, b, s,
                                    policy::draw_diffusion_noise(rng_a, 16, pc.flat_dim(), 25));
        lb = steered_diffusion_loss(tb, net, steered, b, s,
                                    policy::draw_diffusion_noise(rng_b, 16, pc.flat_dim(), 25), enc,
                                    zero)
                 .loss;
      } else {
        la = policy::flow_loss(ta, net, base, b,
                               policy::draw_flow_noise(rng_a, 16, pc.flat_dim(), {}));
        lb = steered_flow_loss(tb, net, steered, b,
                               policy::draw_flow_noise(rng_b, 16, pc.flat_dim(), {}), enc, zero)
                 .loss;
      }
      REQUIRE(la.scalar() == lb.scalar());
      ta.backward(la);
      tb.backward(lb);
      adam_a.step(base, ta.param_grads(base));
      adam_b.step(steered, tb.param_grads(steered));
    }
    CHECK(base.checksum() == steered.checksum());
  }
}

TEST_CASE("steered diffusion loss: guidance vanishes when the corrupted chunk is clean") {
  vae::VaeConfig vc = tiny_vae();
  diff::ParamStore enc_store(18);
  vae::ActionVae v = vae::ActionVae::create(vc, enc_store);
  LatentEncoder enc = LatentEncoder::vae_means(v, enc_store);
  policy::PolicyConfig pc = policy_for(vc);
  diff::ParamStore store(19);
  policy::PolicyNet net = policy::PolicyNet::create(pc, store);
  Rng rng(20);
  policy::PolicyBatch b = random_batch(rng, pc, 4);
  b.chunks.setZero();
  NoiseSchedule s = NoiseSchedule::standard(25);
  policy::DiffusionNoise dn = policy::draw_diffusion_noise(rng, 4, pc.flat_dim(), 25);
  dn.eps.setZero();
  GuidanceConfig on;
  on.scale = 1.0;
  diff::Tape t1, t2;
  SteeredLoss steered = steered_diffusion_loss(t1, net, store, b, s, dn, enc, on);
  CHECK(steered.loss.scalar() == policy::diffusion_loss(t2, net, store, b, s, dn).scalar());
  CHECK(steered.mean_distance == 0.0);
}

TEST_CASE("steered flow loss: a tau = 1 sample carries no guidance") {
  vae::VaeConfig vc = tiny_vae();
  diff::ParamStore enc_store(21);
  vae::ActionVae v = vae::ActionVae::create(vc, enc_store);
  LatentEncoder enc = LatentEncoder::vae_means(v, enc_store);
  policy::PolicyConfig pc = policy_for(vc);
  diff::ParamStore store(22);
  policy::PolicyNet net = policy::PolicyNet::create(pc, store);
  Rng rng(23);
  policy::PolicyBatch b = random_batch(rng, pc, 3);
  policy::FlowNoise fn = policy::draw_flow_noise(rng, 3, pc.flat_dim(), {});
  fn.taus.assign(3, 1.0);
  GuidanceConfig on;
  on.scale = 2.0;
  diff::Tape t1, t2;
  CHECK(steered_flow_loss(t1, net, store, b, fn, enc, on).loss.scalar() ==
        doctest::Approx(policy::flow_loss(t2, net, store, b, fn).scalar()).epsilon(1e-14));
}

TEST_CASE("steered losses: gradients match finite differences with the encoder frozen") {
  vae::VaeConfig vc = tiny_vae();
  policy::PolicyConfig pc = policy_for(vc);
  NoiseSchedule s = NoiseSchedule::standard(25);
  Rng rng(24);
  for (int inst = 0; inst < 3; ++inst) {
    diff::ParamStore enc_store(200 + inst);
    vae::ActionVae v = vae::ActionVae::create(vc, enc_store);
    randomize(enc_store, rng, 0.5);
    LatentEncoder enc = LatentEncoder::vae_means(v, enc_store);
    const uint64_t before = enc_store.checksum();
    diff::ParamStore store(300 + inst);
    policy::PolicyNet net = policy::PolicyNet::create(pc, store);
    randomize(store, rng, 0.5);
    policy::PolicyBatch b = random_batch(rng, pc, 3);
    policy::DiffusionNoise dn = policy::draw_diffusion_noise(rng, 3, pc.flat_dim(), 25);
    policy::FlowNoise fn = policy::draw_flow_noise(rng, 3, pc.flat_dim(), {});
    GuidanceConfig cfg;
    cfg.scale = 0.7;
    cfg.step_scaling = StepScaling::cosine;
    auto dg = [&](diff::Tape& t, const diff::ParamStore& st, diff::Var) {
      return steered_diffusion_loss(t, net, st, b, s, dn, enc, cfg).loss;
    };
    auto fg = [&](diff::Tape& t, const diff::ParamStore& st, diff::Var) {
      return steered_flow_loss(t, net, st, b, fn, enc, cfg).loss;
    };
    diff::GradCheckResult r1 = diff::grad_check(dg, store, Matrix::Zero(1, 1), 1e-5);
    diff::GradCheckResult r2 = diff::grad_check(fg, store, Matrix::Zero(1, 1), 1e-5);
    INFO(r1.worst, " ", r2.worst);
    CHECK(r1.max_relative_error < 1e-4);
    CHECK(r2.max_relative_error < 1e-4);
    // No encoder parameter is touched by the steered tape.
    diff::Tape t;
    diff::Var loss = dg(t, store, diff::Var{});
    t.backward(loss);
    for (const auto& [name, grad] : t.param_grads(enc_store)) CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK(enc_store.checksum() == before);
  }
}

TEST_CASE("encoder parameters are unchanged by steered training") {
  vae::VaeConfig vc = tiny_vae();
  diff::ParamStore enc_store(25);
  vae::ActionVae v = vae::ActionVae::create(vc, enc_store);
  LatentEncoder enc = LatentEncoder::vae_means(v, enc_store);
  const uint64_t before = enc_store.checksum();
  policy::PolicyConfig pc = policy_for(vc);
  diff::ParamStore store(26);
  policy::PolicyNet net = policy::PolicyNet::create(pc, store);
  diff::Adam adam(store, diff::AdamConfig{});
  NoiseSchedule s = NoiseSchedule::standard(25);
  GuidanceConfig cfg;
  cfg.scale = 1.0;
  cfg.perturbation_std = 0.01;
  Rng rng(27);
  for (int step = 0; step < 50; ++step) {
    policy::PolicyBatch b = random_batch(rng, pc, 8);
    diff::Tape tape;
    Matrix unit = normal_matrix(rng, 8, vc.latent_dim);
    SteeredLoss l = step % 2 == 0
                        ? steered_diffusion_loss(tape, net, store, b, s,
                                                 policy::draw_diffusion_noise(rng, 8, pc.flat_dim(), 25),
                                                 enc, cfg, unit)
                        : steered_flow_loss(tape, net, store, b,
                                            policy::draw_flow_noise(rng, 8, pc.flat_dim(), {}), enc,
                                            cfg, unit);
    tape.backward(l.loss);
    adam.step(store, tape.param_grads(store));
  }
  CHECK(enc_store.checksum() == before);
}

TEST_CASE("score of a trained Gaussian model matches the analytic marginal score") {
  NoiseSchedule s = NoiseSchedule::standard(50);
  const double m = 1.5, sd0 = 0.5;
  auto data = [&](Rng& rng, policy::PolicyBatch& b) {
    for (Eigen::Index i = 0; i < b.chunks.rows(); ++i) b.chunks(i, 0) = m + sd0 * rng.normal();
  };
  toys::ToyModel model = toys::train_toy(policy::Family::diffusion, toys::toy_config(1, 1), data,
                                         s, 2000, 28);
  Rng rng(29);
  for (int k : {15, 25, 35}) {
    const double ab = s.alpha_bar(k);
    const double mu = std::sqrt(ab) * m;
    const double var = ab * sd0 * sd0 + 1 - ab;
    Matrix x(10000, 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = mu + std::sqrt(var) * rng.normal();
    Matrix eps_hat = model.net.predict(model.store, x,
                                       std::vector<double>(10000, policy::diffusion_time(k, 50)),
                                       Matrix(10000, 0), std::vector<int>(10000, 0));
    Matrix score = score_from_noise(eps_hat, k, s);
    Matrix exact = -(x.array() - mu).matrix() / var;
    const double rel = (score - exact).cwiseAbs().sum() / exact.cwiseAbs().sum();
    INFO("k ", k, " relative error ", rel);
    CHECK(rel < 0.1);
  }
}

TEST_CASE("guidance config validation") {
  GuidanceConfig c;
  CHECK_NOTHROW(c.validate());
  c.scale = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = GuidanceConfig{};
  c.tau_min = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
