#pragma once

// Run configuration. Files are flat UTF-8 `key = value` lines; a `[section]`
// header prefixes the keys that follow it, so `[vae]` + `latent_dim = 8` and
// `vae.latent_dim = 8` are the same setting. `#` starts a comment. Unknown
// keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ate/guidance/guidance.hpp"
#include "ate/policy/policy_net.hpp"
#include "ate/vae/action_vae.hpp"

namespace ate::pipeline {

enum class Variant { baseline, ate };
const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

enum class Stage { all, stage1, stage2 };
const char* to_string(Stage s);

struct CorpusSettings {
  int pretrain_episodes = 40;  // per (embodiment, task)
  int adapt_episodes = 25;     // per task on the target arm
  int chunk_len = 16;
  int stride = 4;
};

struct VaeSettings {
  vae::VaeConfig model;  // chunk_len and action_dim are filled from the corpus
  int pretrain_steps = 3000;
  int adapt_steps = 3000;
  int batch = 64;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  bool prior_diagonal = true;
  double prior_floor = 1e-6;
};

struct PolicySettings {
  int width = 256;
  int blocks = 4;
  int time_dim = 32;
  int task_dim = 16;
  int pretrain_steps = 20000;
  int finetune_steps = 20000;
  int batch = 64;
  double lr = 1e-4;
  double weight_decay = 1e-4;
};

struct DiffusionSettings {
  int steps = 50;
  // Zero selects the standard schedule for the step count (0.1/K to 20/K).
  double beta_start = 0.0;
  double beta_end = 0.0;
  policy::ReverseUpdate update = policy::ReverseUpdate::posterior_mean;

  policy::NoiseSchedule schedule() const;
};

struct FlowSettings {
  double tau_min = 0.02;
  int integration_steps = 32;
};

struct EvalSettings {
  int episodes = 200;
  int execute_horizon = 8;
};

struct RunSettings {
  Stage stage = Stage::all;
  std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<policy::Family> families{policy::Family::diffusion, policy::Family::flow};
  std::vector<Variant> variants{Variant::baseline, Variant::ate};
  // Fine-tuning steps between evaluated checkpoints; 0 keeps only the final one.
  int checkpoint_every = 0;
  int threads = 0;  // 0 = hardware concurrency
};

struct RunConfig {
  CorpusSettings corpus;
  VaeSettings vae;
  PolicySettings policy;
  DiffusionSettings diffusion;
  FlowSettings flow;
  guidance::GuidanceConfig guidance;
  EvalSettings eval;
  RunSettings run;

  // Throws ConfigError on the first violated invariant.
  void validate() const;

  // Applies one `key=value`; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);

  // Every key with its resolved value, sorted by key, one `key = value` per line.
  std::string to_text() const;
  static std::vector<std::string> keys();
};

// Settings absent from the text keep their value in base.
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                       const RunConfig& base = RunConfig{});
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = RunConfig{});

// Tiny budgets for smoke runs and the determinism check.
RunConfig micro_config();
// Reduced widths that keep the five-seed comparison within a few CPU hours.
RunConfig desk_config();

int resolved_threads(const RunSettings& run);

}  // namespace ate::pipeline
