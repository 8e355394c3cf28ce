#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ate/diff/adam.hpp"
#include "ate/vae/action_vae.hpp"

namespace ate::vae {

struct VaeTrainOptions {
  int steps = 2000;
  int batch = 64;
  diff::AdamConfig adam;
  uint64_t seed = 0;
};

struct VaeStepStats {
  int step = 0;
  double loss = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  double mmd = 0.0;
};

using VaeStepCallback = std::function<void(const VaeStepStats&)>;

// Minibatch training with batches drawn uniformly with replacement. Without
// a prior the loss is the pre-training objective against N(0, I); with one it
// is the adaptation objective. Returns the stats of the final step.
VaeStepStats train_vae(const ActionVae& vae, ParamStore& store, const std::vector<Matrix>& chunks,
                       const std::optional<PriorStats>& prior, const VaeTrainOptions& options,
                       const VaeStepCallback& on_step = {});

// Root mean squared error of decode(encode(x).mean) over all elements.
double reconstruction_rmse(const ActionVae& vae, const ParamStore& store,
                           const std::vector<Matrix>& chunks);

}  // namespace ate::vae
