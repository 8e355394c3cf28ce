#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>

#include "ate/errors.hpp"
#include "ate/pipeline/pipeline.hpp"

namespace ate::pipeline {
namespace {

env::TaskSpec task_for(int id) { return id == 0 ? env::reach_task() : env::push_task(); }

struct ShardResult {
  long successes = 0;
  long steps = 0;
  long decisions = 0;
};

ShardResult run_shard(const ChunkPolicy& policy, const EvalProtocol& p, uint64_t seed, int first,
                      int count, int shard) {
  std::vector<env::EnvState> states;
  std::vector<int> tasks;
  std::vector<int> steps(static_cast<std::size_t>(count), 0);
  std::vector<bool> done(static_cast<std::size_t>(count), false);
  ShardResult out;
  for (int i = 0; i < count; ++i) {
    const int e = first + i;
    tasks.push_back(e % 2);
    states.push_back(env::reset(p.arm, task_for(e % 2), derive_seed(seed, static_cast<uint64_t>(e))));
  }
  const uint64_t shard_seed = derive_seed(seed, (1ULL << 32) + static_cast<uint64_t>(shard));
  for (uint64_t decision = 0;; ++decision) {
    std::vector<int> live;
    for (int i = 0; i < count; ++i) {
      if (!done[static_cast<std::size_t>(i)]) live.push_back(i);
    }
    if (live.empty()) break;
    Matrix obs(static_cast<Eigen::Index>(live.size()), p.action_dim + 6);
    std::vector<int> live_tasks;
    std::vector<env::EnvState> live_states;
    for (std::size_t j = 0; j < live.size(); ++j) {
      const auto i = static_cast<std::size_t>(live[j]);
      obs.row(static_cast<Eigen::Index>(j)) = corpus::observe(p.arm, states[i], p.action_dim);
      live_tasks.push_back(tasks[i]);
      live_states.push_back(states[i]);
    }
    std::vector<Matrix> chunks = policy(obs, live_tasks, live_states, derive_seed(shard_seed, decision));
    if (chunks.size() != live.size()) throw DimensionError("evaluate: policy returned the wrong batch size");
    ++out.decisions;
    for (std::size_t j = 0; j < live.size(); ++j) {
      const auto i = static_cast<std::size_t>(live[j]);
      const Matrix& chunk = chunks[j];
      if (chunk.rows() < p.execute_horizon || chunk.cols() < p.arm.dof) {
        throw DimensionError("evaluate: chunk shorter than the execution horizon");
      }
      const env::TaskSpec task = task_for(tasks[i]);
      for (int t = 0; t < p.execute_horizon; ++t) {
        Eigen::VectorXd a = chunk.row(t).head(p.arm.dof).transpose();
        for (Eigen::Index q = 0; q < a.size(); ++q) {
          if (!std::isfinite(a(q))) a(q) = 0.0;
        }
        states[i] = env::step(p.arm, states[i], a);
        ++steps[i];
        if (env::success(p.arm, states[i], task)) {
          ++out.successes;
          done[i] = true;
        } else if (steps[i] >= task.max_steps) {
          done[i] = true;
        }
        if (done[i]) break;
      }
    }
  }
  for (int s : steps) out.steps += s;
  return out;
}

}  // namespace

EvalResult evaluate_policy(const ChunkPolicy& policy, const EvalProtocol& p, uint64_t seed) {
  if (p.episodes < 1) throw UsageError("evaluate: episodes must be at least 1");
  if (p.execute_horizon < 1 || p.execute_horizon > p.chunk_len) {
    throw ConfigError("evaluate: execution horizon must lie in [1, chunk_len]");
  }
  const int shards = (p.episodes + kEvalShard - 1) / kEvalShard;
  std::vector<ShardResult> results(static_cast<std::size_t>(shards));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int s = next++; s < shards; s = next++) {
      const int first = s * kEvalShard;
      results[static_cast<std::size_t>(s)] =
          run_shard(policy, p, seed, first, std::min(kEvalShard, p.episodes - first), s);
    }
  };
  const int threads = std::clamp(p.threads, 1, shards);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        try {
          worker();
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = shards;
        }
      });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
  }
  EvalResult r;
  r.episodes = p.episodes;
  long steps = 0;
  for (const auto& s : results) {
    r.successes += s.successes;
    r.decisions += s.decisions;
    steps += s.steps;
  }
  r.mean_steps = static_cast<double>(steps) / static_cast<double>(p.episodes);
  return r;
}

ChunkPolicy model_policy(const policy::PolicyCheckpoint& ckpt, const RunConfig& cfg) {
  auto shared = std::make_shared<policy::PolicyCheckpoint>(ckpt);
  diff::ParamStore scratch;
  auto net = std::make_shared<policy::PolicyNet>(policy::PolicyNet::create(ckpt.config, scratch, ckpt.prefix));
  auto norm = std::make_shared<corpus::NormStats>(norm_from_json(ckpt.metadata));
  if (norm->dim() != ckpt.config.action_dim) throw DimensionError("model_policy: norm width differs from the policy");
  std::shared_ptr<policy::NoiseSchedule> sched;
  if (ckpt.family == policy::Family::diffusion) {
    sched = std::make_shared<policy::NoiseSchedule>(policy::NoiseSchedule::from_alphas(ckpt.schedule_alphas));
  }
  const policy::ReverseUpdate rule = cfg.diffusion.update;
  const int flow_steps = cfg.flow.integration_steps;
  return [shared, net, norm, sched, rule, flow_steps](const Matrix& obs, const std::vector<int>& tasks,
                                                      const std::vector<env::EnvState>&, uint64_t seed) {
    const auto& c = shared->config;
    Matrix flat = shared->family == policy::Family::diffusion
                      ? policy::sample_diffusion(*net, shared->params, obs, tasks, *sched, rule, seed)
                      : policy::integrate_flow(*net, shared->params, obs, tasks, flow_steps, seed);
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(flat.rows()));
    for (Eigen::Index i = 0; i < flat.rows(); ++i) {
      Matrix chunk = Eigen::Map<const Matrix>(flat.row(i).data(), c.chunk_len, c.action_dim);
      out.push_back(norm->invert(chunk));
    }
    return out;
  };
}

ChunkPolicy random_policy(const EmbodimentSpec& arm, int chunk_len, int action_dim) {
  return [arm, chunk_len, action_dim](const Matrix& obs, const std::vector<int>&,
                                      const std::vector<env::EnvState>&, uint64_t seed) {
    Rng rng(seed);
    std::vector<Matrix> out;
    for (Eigen::Index i = 0; i < obs.rows(); ++i) {
      Matrix chunk = Matrix::Zero(chunk_len, action_dim);
      for (int t = 0; t < chunk_len; ++t) {
        for (int q = 0; q < arm.dof; ++q) chunk(t, q) = rng.uniform(-env::kMaxJointDelta, env::kMaxJointDelta);
      }
      out.push_back(std::move(chunk));
    }
    return out;
  };
}

ChunkPolicy expert_policy(const EmbodimentSpec& arm, int chunk_len, int action_dim) {
  return [arm, chunk_len, action_dim](const Matrix&, const std::vector<int>& tasks,
                                      const std::vector<env::EnvState>& states, uint64_t) {
    std::vector<Matrix> out;
    for (std::size_t i = 0; i < states.size(); ++i) {
      env::EnvState s = states[i];
      const env::TaskSpec task = tasks[i] == 0 ? env::reach_task() : env::push_task();
      Matrix chunk = Matrix::Zero(chunk_len, action_dim);
      for (int t = 0; t < chunk_len; ++t) {
        Eigen::VectorXd a = env::scripted_expert(arm, s, task);
        chunk.row(t).head(arm.dof) = a.transpose();
        s = env::step(arm, s, a);
      }
      out.push_back(std::move(chunk));
    }
    return out;
  };
}

EvalProtocol eval_protocol(const RunConfig& cfg, int threads) {
  EvalProtocol p;
  p.arm = four_link_arm();
  p.episodes = cfg.eval.episodes;
  p.execute_horizon = cfg.eval.execute_horizon;
  p.chunk_len = cfg.corpus.chunk_len;
  p.action_dim = p.arm.action_dim;
  p.threads = threads;
  return p;
}

EvalResult evaluate(const policy::PolicyCheckpoint& ckpt, const RunConfig& cfg, uint64_t seed,
                    int threads) {
  return evaluate_policy(model_policy(ckpt, cfg), eval_protocol(cfg, threads), seed);
}

}  // namespace ate::pipeline
