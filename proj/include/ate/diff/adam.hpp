#pragma once

#include "ate/diff/param_store.hpp"

namespace ate::diff {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled (AdamW) decay applied to every parameter.
  double weight_decay = 1e-4;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class Adam {
 public:
  Adam(const ParamStore& store, AdamConfig config);

  void step(ParamStore& store, const Gradients& grads);
  long steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  AdamConfig config_;
  Gradients first_;
  Gradients second_;
  long steps_ = 0;
};

}  // namespace ate::diff
