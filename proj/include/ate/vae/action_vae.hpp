#pragma once

// Chunk-level action VAE. The encoder is a transformer over the chunk with two
// learnable summary tokens prepended; their outputs give the posterior mean and
// log-variance. The decoder cross-attends from learned positional queries into
// a single memory token built from z.

#include <optional>
#include <string>
#include <vector>

#include "ate/diff/nn.hpp"
#include "ate/rng.hpp"
#include "ate/vae/divergence.hpp"

namespace ate::vae {

using diff::ParamStore;

struct VaeConfig {
  int latent_dim = 32;
  int chunk_len = 16;
  int action_dim = 4;
  int depth = 2;
  int width = 128;
  int heads = 4;
  int ffn_hidden = 256;
  double info_alpha = 0.0;
  double info_lambda = 1.0;
  // Variance of the Gaussian decoder likelihood; the reconstruction term is
  // 0.5 / decoder_variance * squared error.
  double decoder_variance = 1.0;
  // Empty means the default scale set sqrt(d) * {0.25, 0.5, 1, 2}.
  std::vector<double> mmd_bandwidths;

  // Signed coefficients of the InfoVAE objective (maximized form):
  //   E[log p(a|z)] - (1 - alpha) KL(q(z|a) || p) - (alpha - lambda - 1) D(q(z) || p).
  double kl_coefficient() const { return 1.0 - info_alpha; }
  double marginal_coefficient() const { return info_alpha - info_lambda - 1.0; }
  // Weight on the MMD term of the minimized loss.
  double mmd_weight() const { return -marginal_coefficient(); }
  std::vector<double> resolved_bandwidths() const;
  void validate() const;
};

class ActionVae {
 public:
  struct Posterior {
    Var mean;     // batch x d
    Var log_var;  // batch x d
  };

  // Registers all parameters in store under prefix.
  static ActionVae create(const VaeConfig& config, ParamStore& store,
                          const std::string& prefix = "vae");

  const VaeConfig& config() const { return config_; }

  // chunks: (batch * chunk_len) x action_dim, chunks stacked along rows.
  Posterior encode(Tape& tape, const ParamStore& store, Var chunks, int batch) const;
  // z: batch x d. Returns (batch * out_len) x action_dim.
  Var decode(Tape& tape, const ParamStore& store, Var z, int out_len) const;

  LatentGaussian encode(const ParamStore& store, const Matrix& chunk) const;
  std::vector<LatentGaussian> encode_many(const ParamStore& store,
                                          const std::vector<Matrix>& chunks) const;
  Matrix decode(const ParamStore& store, const Eigen::RowVectorXd& z, int out_len) const;

  std::string summary_token_name() const { return prefix_ + ".enc.tokens"; }
  std::string mean_head_name() const { return prefix_ + ".enc.mean"; }

 private:
  VaeConfig config_;
  std::string prefix_;
  diff::Dense enc_in_, mean_head_, log_var_head_;
  std::vector<diff::EncoderBlock> enc_blocks_;
  diff::Dense z_proj_, dec_out_;
  std::vector<diff::DecoderBlock> dec_blocks_;
  diff::LayerNorm dec_norm_;
};

// Per-step randomness: reparameterization noise and unit-normal draws that
// become prior samples for the MMD term.
struct VaeNoise {
  Matrix latent;      // batch x d
  Matrix prior_unit;  // batch x d
};
VaeNoise draw_vae_noise(Rng& rng, int batch, int dim);

struct VaeLoss {
  Var total;
  double recon = 0.0;
  double kl = 0.0;
  double mmd = 0.0;
};

// Minimized InfoVAE loss against an explicit Gaussian prior:
//   recon + (1 - alpha) KL(q(z|a) || prior) + (lambda + 1 - alpha) MMD(z, prior draws).
// recon is the Gaussian decoder negative log-likelihood without its constant,
// 0.5 / decoder_variance * squared error summed over the chunk, averaged over
// the batch.
VaeLoss vae_loss(Tape& tape, const ActionVae& vae, const ParamStore& store, Var chunks,
                 int batch, const PriorStats& prior, const VaeNoise& noise);
// Against N(0, I).
VaeLoss pretrain_vae_loss(Tape& tape, const ActionVae& vae, const ParamStore& store,
                          Var chunks, int batch, const VaeNoise& noise);
// Against N(mu, Sigma) of the pre-training latents; throws PipelineOrderError
// when the prior has not been estimated.
VaeLoss adapt_vae_loss(Tape& tape, const ActionVae& vae, const ParamStore& store, Var chunks,
                       int batch, const std::optional<PriorStats>& prior, const VaeNoise& noise);

Matrix stack_chunks(const std::vector<Matrix>& chunks);

// Streaming mean and covariance (Welford). Merging two accumulators gives the
// same moments as one pass over the concatenated stream.
class LatentMoments {
 public:
  explicit LatentMoments(int dim);
  void add(const Eigen::RowVectorXd& z);
  void merge(const LatentMoments& other);
  long count() const { return count_; }
  const Eigen::RowVectorXd& mean() const { return mean_; }
  // Population covariance (divides by count).
  Matrix covariance() const;
  // Diagonal mode zeroes off-diagonals; variances are floored.
  PriorStats finalize(bool diagonal, double variance_floor = 1e-6) const;

 private:
  long count_ = 0;
  Eigen::RowVectorXd mean_;
  Matrix m2_;
};

// Encodes every chunk, draws one z per chunk (noise stream derived from seed
// and the chunk index) and accumulates the moments over `workers` shards.
// Throws UsageError on an empty chunk set.
PriorStats estimate_prior(const ActionVae& vae, const ParamStore& store,
                          const std::vector<Matrix>& chunks, uint64_t seed, bool diagonal = true,
                          double variance_floor = 1e-6, int workers = 1,
                          bool zero_noise = false);

struct VaeCheckpoint {
  VaeConfig config;
  ParamStore params;
  std::optional<PriorStats> prior;
  std::string prefix = "vae";
  std::string metadata;  // free-form JSON carried alongside the weights
};

void save_vae(const std::string& path, const VaeCheckpoint& ckpt);
VaeCheckpoint load_vae(const std::string& path);

}  // namespace ate::vae
