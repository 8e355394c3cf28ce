#include "ate/policy/policy_net.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "ate/binary_io.hpp"
#include "ate/errors.hpp"

namespace ate::policy {
namespace {

using diff::check_dims;
using nlohmann::json;

constexpr char kMagic[4] = {'A', 'T', 'E', 'P'};
constexpr uint32_t kVersion = 1;

json config_json(const PolicyConfig& c) {
  return json{{"chunk_len", c.chunk_len}, {"action_dim", c.action_dim}, {"obs_dim", c.obs_dim},
              {"num_tasks", c.num_tasks}, {"width", c.width},           {"blocks", c.blocks},
              {"time_dim", c.time_dim},   {"task_dim", c.task_dim}};
}

PolicyConfig config_from_json(const json& j) {
  PolicyConfig c;
  c.chunk_len = j.at("chunk_len").get<int>();
  c.action_dim = j.at("action_dim").get<int>();
  c.obs_dim = j.at("obs_dim").get<int>();
  c.num_tasks = j.at("num_tasks").get<int>();
  c.width = j.at("width").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.time_dim = j.at("time_dim").get<int>();
  c.task_dim = j.at("task_dim").get<int>();
  return c;
}

Matrix unit_normal(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

const char* to_string(Family f) { return f == Family::diffusion ? "diffusion" : "flow"; }

Family family_from_string(const std::string& s) {
  if (s == "diffusion") return Family::diffusion;
  if (s == "flow") return Family::flow;
  throw ConfigError("unknown policy family '" + s + "' (expected diffusion or flow)");
}

void PolicyConfig::validate() const {
  if (chunk_len <= 0 || action_dim <= 0 || obs_dim < 0 || num_tasks <= 0) {
    throw ConfigError("policy: chunk_len, action_dim and num_tasks must be positive");
  }
  if (width <= 0 || blocks < 0 || time_dim <= 0 || time_dim % 2 != 0 || task_dim <= 0) {
    throw ConfigError("policy: width and task_dim must be positive, time_dim positive and even");
  }
}

Matrix time_embedding(const std::vector<double>& times, int dim) {
  const int half = dim / 2;
  Matrix out(static_cast<Eigen::Index>(times.size()), dim);
  for (std::size_t r = 0; r < times.size(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = half == 1 ? 1.0 : std::pow(1000.0, static_cast<double>(i) / (half - 1));
      out(static_cast<Eigen::Index>(r), i) = std::sin(freq * times[r]);
      out(static_cast<Eigen::Index>(r), half + i) = std::cos(freq * times[r]);
    }
  }
  return out;
}

PolicyNet PolicyNet::create(const PolicyConfig& config, ParamStore& store,
                            const std::string& prefix) {
  config.validate();
  PolicyNet n;
  n.config_ = config;
  n.prefix_ = prefix;
  const int cond_dim = config.time_dim + config.obs_dim + config.task_dim;
  store.add_normal(prefix + ".task_embed", config.num_tasks, config.task_dim, 1.0);
  n.in_ = diff::Dense::create(store, prefix + ".in", config.flat_dim(), config.width);
  n.cond_in_ = diff::Dense::create(store, prefix + ".cond_in", cond_dim, config.width);
  for (int b = 0; b < config.blocks; ++b) {
    const std::string name = prefix + ".block" + std::to_string(b);
    n.norms_.push_back(diff::LayerNorm::create(store, name + ".ln", config.width));
    n.ups_.push_back(diff::Dense::create(store, name + ".up", config.width, config.width));
    n.conds_.push_back(diff::Dense::create(store, name + ".cond", cond_dim, config.width));
    n.downs_.push_back(diff::Dense::create(store, name + ".down", config.width, config.width));
  }
  n.out_norm_ = diff::LayerNorm::create(store, prefix + ".out_ln", config.width);
  n.out_ = diff::Dense::create(store, prefix + ".out", config.width, config.flat_dim(), 0.1);
  return n;
}

Var PolicyNet::forward(Tape& tape, const ParamStore& store, Var noisy,
                       const std::vector<double>& times, const Matrix& obs,
                       const std::vector<int>& tasks) const {
  const Eigen::Index batch = noisy.rows();
  check_dims(noisy.cols() == config_.flat_dim(), "policy",
             "expected flattened chunk width " + std::to_string(config_.flat_dim()) + ", got " +
                 std::to_string(noisy.cols()));
  check_dims(static_cast<Eigen::Index>(times.size()) == batch &&
                 static_cast<Eigen::Index>(tasks.size()) == batch && obs.rows() == batch,
             "policy", "times, observations and tasks must have one entry per sample");
  check_dims(obs.cols() == config_.obs_dim, "policy",
             "expected observation width " + std::to_string(config_.obs_dim) + ", got " +
                 std::to_string(obs.cols()));
  for (int t : tasks) {
    if (t < 0 || t >= config_.num_tasks) {
      throw UsageError("policy: task id " + std::to_string(t) + " outside [0, " +
                       std::to_string(config_.num_tasks) + ")");
    }
  }
  Var parts[] = {tape.constant(time_embedding(times, config_.time_dim)), tape.constant(obs),
                 diff::select_rows(tape.param(store, prefix_ + ".task_embed"), tasks)};
  Var cond = diff::concat_cols(parts);
  Var h = diff::add(in_(tape, store, noisy), cond_in_(tape, store, cond));
  for (std::size_t b = 0; b < ups_.size(); ++b) {
    Var u = diff::add(ups_[b](tape, store, norms_[b](tape, store, h)), conds_[b](tape, store, cond));
    h = diff::add(h, downs_[b](tape, store, diff::silu(u)));
  }
  return out_(tape, store, out_norm_(tape, store, h));
}

Matrix PolicyNet::predict(const ParamStore& store, const Matrix& noisy,
                          const std::vector<double>& times, const Matrix& obs,
                          const std::vector<int>& tasks) const {
  Tape tape;
  tape.set_params_frozen(true);
  return forward(tape, store, tape.constant(noisy), times, obs, tasks).value();
}

DiffusionNoise draw_diffusion_noise(Rng& rng, int batch, int flat_dim, int steps) {
  DiffusionNoise n;
  n.steps.resize(static_cast<std::size_t>(batch));
  for (auto& k : n.steps) k = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(steps)));
  n.eps = unit_normal(rng, batch, flat_dim);
  return n;
}

FlowNoise draw_flow_noise(Rng& rng, int batch, int flat_dim, const FlowTimeSampler& sampler) {
  FlowNoise n;
  n.taus.resize(static_cast<std::size_t>(batch));
  for (auto& t : n.taus) t = sampler.sample(rng);
  n.eps = unit_normal(rng, batch, flat_dim);
  return n;
}

Matrix corrupt_batch(const Matrix& chunks, const DiffusionNoise& noise,
                     const NoiseSchedule& sched) {
  Matrix out(chunks.rows(), chunks.cols());
  for (Eigen::Index r = 0; r < chunks.rows(); ++r) {
    out.row(r) = corrupt_diffusion(chunks.row(r), noise.steps[static_cast<std::size_t>(r)],
                                   noise.eps.row(r), sched);
  }
  return out;
}

Matrix corrupt_batch(const Matrix& chunks, const FlowNoise& noise) {
  Matrix out(chunks.rows(), chunks.cols());
  for (Eigen::Index r = 0; r < chunks.rows(); ++r) {
    out.row(r) = corrupt_flow(chunks.row(r), noise.taus[static_cast<std::size_t>(r)],
                              noise.eps.row(r));
  }
  return out;
}

Var diffusion_loss(Tape& tape, const PolicyNet& net, const ParamStore& store,
                   const PolicyBatch& batch, const NoiseSchedule& sched,
                   const DiffusionNoise& noise) {
  const int k_total = sched.steps();
  std::vector<double> times;
  for (int k : noise.steps) times.push_back(diffusion_time(k, k_total));
  Var noisy = tape.constant(corrupt_batch(batch.chunks, noise, sched));
  Var eps_hat = net.forward(tape, store, noisy, times, batch.obs, batch.tasks);
  Var resid = diff::sub(tape.constant(noise.eps), eps_hat);
  return diff::scale(diff::sum(diff::square(resid)), 1.0 / batch.size());
}

Var flow_loss(Tape& tape, const PolicyNet& net, const ParamStore& store, const PolicyBatch& batch,
              const FlowNoise& noise) {
  Var noisy = tape.constant(corrupt_batch(batch.chunks, noise));
  Var v = net.forward(tape, store, noisy, noise.taus, batch.obs, batch.tasks);
  Var resid = diff::sub(v, tape.constant(batch.chunks - noise.eps));
  return diff::scale(diff::sum(diff::square(resid)), 1.0 / batch.size());
}

Matrix reverse_diffusion(const NoisePredictor& eps_model, Matrix x, const NoiseSchedule& sched,
                         ReverseUpdate rule, Rng& rng) {
  for (int k = sched.steps(); k >= 1; --k) {
    Matrix eps_hat = eps_model(x, k);
    Matrix fresh = k > 1 ? unit_normal(rng, static_cast<int>(x.rows()), static_cast<int>(x.cols()))
                         : Matrix();
    x = denoise_step(x, k, eps_hat, fresh, sched, rule);
  }
  return x;
}

Matrix euler_integrate(const VelocityField& field, Matrix x, int steps) {
  if (steps < 1) throw UsageError("euler_integrate: steps must be at least 1");
  const double dt = 1.0 / steps;
  for (int i = 0; i < steps; ++i) x += dt * field(x, i * dt);
  return x;
}

Matrix sample_diffusion(const PolicyNet& net, const ParamStore& store, const Matrix& obs,
                        const std::vector<int>& tasks, const NoiseSchedule& sched,
                        ReverseUpdate rule, uint64_t seed) {
  Rng rng(seed);
  const int batch = static_cast<int>(obs.rows());
  Matrix x = unit_normal(rng, batch, net.config().flat_dim());
  auto eps_model = [&](const Matrix& xk, int k) {
    return net.predict(store, xk,
                       std::vector<double>(static_cast<std::size_t>(batch),
                                           diffusion_time(k, sched.steps())),
                       obs, tasks);
  };
  return reverse_diffusion(eps_model, std::move(x), sched, rule, rng);
}

Matrix integrate_flow(const PolicyNet& net, const ParamStore& store, const Matrix& obs,
                      const std::vector<int>& tasks, int steps, uint64_t seed) {
  Rng rng(seed);
  const int batch = static_cast<int>(obs.rows());
  Matrix x = unit_normal(rng, batch, net.config().flat_dim());
  auto field = [&](const Matrix& xt, double tau) {
    return net.predict(store, xt, std::vector<double>(static_cast<std::size_t>(batch), tau), obs,
                       tasks);
  };
  return euler_integrate(field, std::move(x), steps);
}

void save_policy(const std::string& path, const PolicyCheckpoint& ckpt) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path + " for writing");
  io::Writer w(file);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.str(ckpt.prefix);
  w.str(to_string(ckpt.family));
  w.str(config_json(ckpt.config).dump());
  w.u64(ckpt.params.size());
  for (const auto& [name, value] : ckpt.params) {
    w.str(name);
    w.matrix_f64(value);
  }
  w.u64(ckpt.schedule_alphas.size());
  for (double a : ckpt.schedule_alphas) w.f64(a);
  w.str(ckpt.metadata);
  if (!file) throw std::runtime_error("write failed for " + path);
}

PolicyCheckpoint load_policy(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path);
  io::Reader r(file);
  io::expect_magic(r, kMagic, "policy checkpoint");
  io::expect_version(r, kVersion, "policy checkpoint");
  PolicyCheckpoint ckpt;
  ckpt.prefix = r.str();
  try {
    ckpt.family = family_from_string(r.str());
    ckpt.config = config_from_json(json::parse(r.str()));
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("policy checkpoint config: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("policy checkpoint: ") + e.what());
  }
  ckpt.config.validate();
  PolicyNet::create(ckpt.config, ckpt.params, ckpt.prefix);
  const uint64_t n = r.u64();
  if (n != ckpt.params.size()) {
    throw CorruptionError("policy checkpoint has " + std::to_string(n) + " tensors, expected " +
                          std::to_string(ckpt.params.size()));
  }
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    Matrix value = r.matrix_f64();
    if (!ckpt.params.contains(name)) throw CorruptionError("unknown tensor " + name);
    const Matrix& expected = ckpt.params.at(name);
    if (expected.rows() != value.rows() || expected.cols() != value.cols()) {
      throw CorruptionError("tensor " + name + " has the wrong shape");
    }
    ckpt.params.assign(name, value);
  }
  const uint64_t k = r.u64();
  if (k > (1u << 20)) throw CorruptionError("policy checkpoint schedule is implausibly long");
  for (uint64_t i = 0; i < k; ++i) ckpt.schedule_alphas.push_back(r.f64());
  ckpt.metadata = r.str();
  return ckpt;
}

}  // namespace ate::policy
