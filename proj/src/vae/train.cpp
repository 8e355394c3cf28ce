#include "ate/vae/train.hpp"

#include <cmath>

#include "ate/errors.hpp"

namespace ate::vae {

VaeStepStats train_vae(const ActionVae& vae, ParamStore& store, const std::vector<Matrix>& chunks,
                       const std::optional<PriorStats>& prior, const VaeTrainOptions& options,
                       const VaeStepCallback& on_step) {
  if (chunks.empty()) throw UsageError("train_vae: no training chunks");
  if (options.batch < 2) throw UsageError("train_vae: batch must be at least 2");
  diff::Adam adam(store, options.adam);
  Rng rng(options.seed);
  const int d = vae.config().latent_dim;
  VaeStepStats stats;
  for (int step = 0; step < options.steps; ++step) {
    std::vector<Matrix> batch;
    batch.reserve(static_cast<std::size_t>(options.batch));
    for (int i = 0; i < options.batch; ++i) batch.push_back(chunks[rng.below(chunks.size())]);
    VaeNoise noise = draw_vae_noise(rng, options.batch, d);
    Tape tape;
    Var x = tape.constant(stack_chunks(batch));
    VaeLoss loss = prior ? adapt_vae_loss(tape, vae, store, x, options.batch, prior, noise)
                         : pretrain_vae_loss(tape, vae, store, x, options.batch, noise);
    tape.backward(loss.total);
    adam.step(store, tape.param_grads(store));
    stats = {step, loss.total.scalar(), loss.recon, loss.kl, loss.mmd};
    if (on_step) on_step(stats);
  }
  return stats;
}

double reconstruction_rmse(const ActionVae& vae, const ParamStore& store,
                           const std::vector<Matrix>& chunks) {
  if (chunks.empty()) throw UsageError("reconstruction_rmse: no chunks");
  std::vector<LatentGaussian> posts = vae.encode_many(store, chunks);
  double sq = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    Matrix recon = vae.decode(store, posts[i].mean, vae.config().chunk_len);
    sq += (recon - chunks[i]).squaredNorm();
    count += static_cast<double>(chunks[i].size());
  }
  return std::sqrt(sq / count);
}

}  // namespace ate::vae
