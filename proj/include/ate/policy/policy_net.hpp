#pragma once

// Conditional chunk generator: a residual MLP over the flattened noisy chunk,
// conditioned on a sinusoidal time embedding, the observation and a learned
// task embedding. The same network serves as the noise predictor of the
// diffusion family and the velocity field of the flow family.

#include <functional>
#include <string>
#include <vector>

#include "ate/diff/nn.hpp"
#include "ate/policy/schedule.hpp"

namespace ate::policy {

using diff::ParamStore;
using diff::Tape;
using diff::Var;

enum class Family { diffusion, flow };
const char* to_string(Family f);
Family family_from_string(const std::string& s);

struct PolicyConfig {
  int chunk_len = 16;
  int action_dim = 4;
  int obs_dim = 14;
  int num_tasks = 2;
  int width = 256;
  int blocks = 4;
  int time_dim = 32;
  int task_dim = 16;

  int flat_dim() const { return chunk_len * action_dim; }
  void validate() const;
};

// Chunks are flattened row-major, one row per sample.
struct PolicyBatch {
  Matrix chunks;  // batch x flat_dim
  Matrix obs;     // batch x obs_dim
  std::vector<int> tasks;

  int size() const { return static_cast<int>(chunks.rows()); }
};

// batch x dim sinusoidal features of t in [0, 1]; frequencies are geometric
// from 1 to 1000 so the K-step grid maps to distinct rows.
Matrix time_embedding(const std::vector<double>& times, int dim);

class PolicyNet {
 public:
  static PolicyNet create(const PolicyConfig& config, ParamStore& store,
                          const std::string& prefix = "policy");

  const PolicyConfig& config() const { return config_; }

  Var forward(Tape& tape, const ParamStore& store, Var noisy, const std::vector<double>& times,
              const Matrix& obs, const std::vector<int>& tasks) const;
  Matrix predict(const ParamStore& store, const Matrix& noisy, const std::vector<double>& times,
                 const Matrix& obs, const std::vector<int>& tasks) const;

 private:
  PolicyConfig config_;
  std::string prefix_;
  diff::Dense in_, cond_in_, out_;
  std::vector<diff::LayerNorm> norms_;
  std::vector<diff::Dense> ups_, downs_, conds_;
  diff::LayerNorm out_norm_;
};

// Diffusion time fed to the network for step k.
inline double diffusion_time(int k, int steps) { return static_cast<double>(k) / steps; }

struct DiffusionNoise {
  std::vector<int> steps;  // one k per sample, uniform on 1..K
  Matrix eps;
};
DiffusionNoise draw_diffusion_noise(Rng& rng, int batch, int flat_dim, int steps);

struct FlowNoise {
  std::vector<double> taus;
  Matrix eps;
};
FlowNoise draw_flow_noise(Rng& rng, int batch, int flat_dim, const FlowTimeSampler& sampler);

Matrix corrupt_batch(const Matrix& chunks, const DiffusionNoise& noise, const NoiseSchedule& sched);
Matrix corrupt_batch(const Matrix& chunks, const FlowNoise& noise);

// Mean over the batch of |eps - eps_theta(a_k, k)|^2.
Var diffusion_loss(Tape& tape, const PolicyNet& net, const ParamStore& store,
                   const PolicyBatch& batch, const NoiseSchedule& sched,
                   const DiffusionNoise& noise);
// Mean over the batch of |v_theta(a_tau, tau) - (a0 - eps)|^2.
Var flow_loss(Tape& tape, const PolicyNet& net, const ParamStore& store, const PolicyBatch& batch,
              const FlowNoise& noise);

// Network-free reverse processes, used by the samplers below and by tests.
using NoisePredictor = std::function<Matrix(const Matrix& x, int k)>;
using VelocityField = std::function<Matrix(const Matrix& x, double tau)>;

Matrix reverse_diffusion(const NoisePredictor& eps_model, Matrix x, const NoiseSchedule& sched,
                         ReverseUpdate rule, Rng& rng);
// Explicit Euler from tau = 0 to 1 in uniform steps.
Matrix euler_integrate(const VelocityField& field, Matrix x, int steps);

// Starts from unit-Gaussian noise drawn from seed; one row per observation.
Matrix sample_diffusion(const PolicyNet& net, const ParamStore& store, const Matrix& obs,
                        const std::vector<int>& tasks, const NoiseSchedule& sched,
                        ReverseUpdate rule, uint64_t seed);
Matrix integrate_flow(const PolicyNet& net, const ParamStore& store, const Matrix& obs,
                      const std::vector<int>& tasks, int steps, uint64_t seed);

struct PolicyCheckpoint {
  PolicyConfig config;
  Family family = Family::diffusion;
  ParamStore params;
  std::vector<double> schedule_alphas;  // empty for the flow family
  std::string prefix = "policy";
  std::string metadata;
};

void save_policy(const std::string& path, const PolicyCheckpoint& ckpt);
PolicyCheckpoint load_policy(const std::string& path);

}  // namespace ate::policy
