#pragma once

// Two-stage orchestration: latent space (pretrain VAE, prior, adaptation VAE),
// then policy fine-tuning with or without latent guidance, closed-loop
// evaluation on the target arm and the single-stage ablation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ate/corpus/corpus.hpp"
#include "ate/pipeline/config.hpp"
#include "ate/pipeline/latent_modes.hpp"
#include "ate/pipeline/report.hpp"
#include "ate/policy/policy_net.hpp"
#include "ate/vae/action_vae.hpp"

namespace ate::pipeline {

using Logger = std::function<void(const std::string&)>;

struct Corpora {
  corpus::Corpus pretrain;  // 2- and 3-link arms padded to the target width
  corpus::Corpus adapt;     // 4-link target arm
};

Corpora generate_corpora(const RunConfig& cfg, uint64_t seed);
void save_corpora(const Corpora& c, const std::filesystem::path& dir);
Corpora load_corpora(const std::filesystem::path& dir);

// Normalized chunks with the observation at each chunk start.
struct ChunkSet {
  std::vector<Matrix> chunks;  // chunk_len x action_dim each
  Matrix obs;                  // one row per chunk
  std::vector<int> tasks;
  corpus::NormStats norm;

  std::size_t size() const { return chunks.size(); }
  // Row-major flattening, one chunk per row.
  Matrix flat() const;
};

ChunkSet make_chunk_set(const corpus::Corpus& c, int chunk_len, int stride);

// Synthetic chunks for the latent mode check. Pretrain chunks come from two
// clusters at +-separation along a random unit direction of the flattened
// chunk, adaptation chunks from the + cluster only. Noise is isotropic with
// standard deviation noise; normalization is the identity.
struct ClusterProtocol {
  int pretrain_chunks = 512;
  int adapt_chunks = 128;
  int chunk_len = 4;
  int action_dim = 2;
  double separation = 3.0;
  double noise = 0.2;
};

struct ClusterData {
  ChunkSet pretrain;
  ChunkSet adapt;
  Eigen::RowVectorXd direction;  // unit, flattened chunk layout
};

ClusterData two_cluster_chunks(const ClusterProtocol& p, uint64_t seed);

std::string norm_to_json(const corpus::NormStats& n);
corpus::NormStats norm_from_json(const std::string& json);

// Stage 1 ------------------------------------------------------------------

vae::VaeCheckpoint train_pretrain_vae(const RunConfig& cfg, const ChunkSet& data, uint64_t seed,
                                      RunReport* report = nullptr);
// Streams the pretrain latents of data into PriorStats stored on the checkpoint.
void attach_prior(const RunConfig& cfg, vae::VaeCheckpoint& pretrain, const ChunkSet& data,
                  uint64_t seed);

enum class PriorTarget { pretrain_latents, standard_normal };

// Adaptation VAE aligned to the pretrain prior. With standard_normal the
// pretrain checkpoint is ignored and the prior target is N(0, I). The
// returned checkpoint stores the prior it was trained against. Throws
// PipelineOrderError when the pretrain prior is missing.
vae::VaeCheckpoint train_adapt_vae(const RunConfig& cfg, const ChunkSet& data,
                                   const vae::VaeCheckpoint* pretrain, uint64_t seed,
                                   PriorTarget target = PriorTarget::pretrain_latents,
                                   RunReport* report = nullptr);

struct Stage1Result {
  vae::VaeCheckpoint pretrain;
  vae::VaeCheckpoint adapt;
  ModeHistogram modes;
};

inline constexpr int kModeComponents = 2;

// Posterior means, one row per chunk.
Matrix encode_means(const vae::VaeCheckpoint& ckpt, const std::vector<Matrix>& chunks);

// Mixture fitted to pretrain latent means, adaptation latent means assigned to it.
ModeHistogram latent_mode_histogram(const vae::VaeCheckpoint& pretrain, const ChunkSet& pre_data,
                                    const vae::VaeCheckpoint& adapt, const ChunkSet& adapt_data,
                                    uint64_t seed, int components = kModeComponents);

Stage1Result run_stage1(const RunConfig& cfg, const ChunkSet& pre_data, const ChunkSet& adapt_data,
                        uint64_t seed, RunReport* report = nullptr, const Logger& log = {});

// Stage 2 ------------------------------------------------------------------

policy::PolicyCheckpoint pretrain_policy(const RunConfig& cfg, policy::Family family,
                                         const ChunkSet& data, uint64_t seed,
                                         RunReport* report = nullptr);

// Called with the fine-tuning step and the current weights at each
// checkpoint; the final step is always included.
using CheckpointHook = std::function<void(long step, const policy::PolicyCheckpoint&)>;

struct FinetuneTrace {
  std::vector<double> losses;  // one per step, in order
};

// Fine-tunes a copy of the pretrained policy on the adaptation chunks. The
// ate variant steers with the adaptation VAE encoder. Throws
// PipelineOrderError unless adapt_vae is a trained adaptation checkpoint
// carrying its prior. Baseline and ate draw identical batch and noise streams.
policy::PolicyCheckpoint run_stage2(const RunConfig& cfg, const policy::PolicyCheckpoint& pretrained,
                                    const ChunkSet& data, const vae::VaeCheckpoint* adapt_vae,
                                    Variant variant, uint64_t seed, RunReport* report = nullptr,
                                    const CheckpointHook& hook = {},
                                    FinetuneTrace* trace = nullptr);

// Evaluation ---------------------------------------------------------------

struct EvalResult {
  long episodes = 0;
  long successes = 0;
  double mean_steps = 0.0;  // steps to success, or the task limit on failure
  long decisions = 0;

  double success_rate() const {
    return episodes == 0 ? 0.0 : static_cast<double>(successes) / static_cast<double>(episodes);
  }
};

// Produces raw (denormalized) action chunks, chunk_len x action_dim each, for
// a batch of live episodes.
using ChunkPolicy = std::function<std::vector<Matrix>(
    const Matrix& obs, const std::vector<int>& tasks, const std::vector<env::EnvState>& states,
    uint64_t seed)>;

struct EvalProtocol {
  EmbodimentSpec arm = four_link_arm();
  int episodes = 200;
  int execute_horizon = 8;
  int chunk_len = 16;
  int action_dim = 4;
  int threads = 1;
};

inline constexpr int kEvalShard = 25;

// Receding horizon: sample a chunk, execute execute_horizon actions, observe
// again. Episodes alternate reach and push and run in fixed shards whose
// seeds depend only on seed and the shard index, so the result does not
// depend on the thread count. Throws UsageError for zero episodes.
EvalResult evaluate_policy(const ChunkPolicy& policy, const EvalProtocol& protocol, uint64_t seed);

ChunkPolicy model_policy(const policy::PolicyCheckpoint& ckpt, const RunConfig& cfg);
ChunkPolicy random_policy(const EmbodimentSpec& arm, int chunk_len, int action_dim);
// Scripted expert rolled forward on a copy of each state.
ChunkPolicy expert_policy(const EmbodimentSpec& arm, int chunk_len, int action_dim);

// Episode stream shared by every variant of one seed, so comparisons are paired.
uint64_t eval_seed(uint64_t seed);

EvalProtocol eval_protocol(const RunConfig& cfg, int threads);
EvalResult evaluate(const policy::PolicyCheckpoint& ckpt, const RunConfig& cfg, uint64_t seed,
                    int threads);

// End to end ---------------------------------------------------------------

struct SeedArtifacts {
  Corpora corpora;
  ChunkSet pre_data;
  ChunkSet adapt_data;
};

SeedArtifacts prepare_data(const RunConfig& cfg, uint64_t seed);

// Stage 1, then per family: pretrained policy, every configured variant,
// success at each checkpoint. Metric names are <family>.<variant>.success and
// friends; see the README for the list.
RunReport run_seed(const RunConfig& cfg, uint64_t seed, const Logger& log = {},
                   const std::filesystem::path& checkpoint_dir = {});

// The ablation for one seed: two-stage and single-stage adaptation VAEs, each
// steering the same pretrained policy. Metrics
// <family>.ablation.two_stage.success and <family>.ablation.single_stage.success.
RunReport run_ablation_seed(const RunConfig& cfg, uint64_t seed, const Logger& log = {});

// All configured seeds; optionally includes the ablation.
RunReport run_pipeline(const RunConfig& cfg, bool with_ablation, const Logger& log = {},
                       const std::filesystem::path& checkpoint_dir = {});

// Paired sign count: seeds where a >= b for the final values of two metrics.
struct PairedComparison {
  int wins = 0;
  int seeds = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
};
PairedComparison compare_paired(const RunReport& report, const std::string& metric_a,
                                const std::string& metric_b);

}  // namespace ate::pipeline
