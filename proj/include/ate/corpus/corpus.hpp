#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ate/diff/param_store.hpp"
#include "ate/env/embodiment.hpp"
#include "ate/env/planar_arm.hpp"

namespace ate::corpus {

using diff::Matrix;

// One expert episode. Row t of states is the observation before action t.
// States hold [joint angles padded to the corpus action width, end-effector
// xy, target xy, block xy]; joints beyond the arm's dof are zero.
struct Trajectory {
  std::string embodiment_id;
  int task_id = 0;
  Matrix states;
  Matrix actions;
  bool success = false;

  Eigen::Index length() const { return actions.rows(); }
};

struct ActionChunk {
  Matrix values;  // chunk_len x action_dim
  std::string embodiment_id;
  int task_id = 0;
  int trajectory = 0;  // index into the source corpus
  int start = 0;       // first timestep of the chunk
};

// Trajectories sharing one action width. Embodiments with fewer joints are
// zero-padded up to action_dim when generated; mixing widths is refused.
struct Corpus {
  std::vector<EmbodimentSpec> embodiments;
  int action_dim = 0;
  std::vector<Trajectory> trajectories;

  int state_dim() const { return action_dim + 6; }
  const EmbodimentSpec& embodiment(const std::string& id) const;
  // Throws DimensionError when a trajectory does not match the corpus widths.
  void validate() const;
  bool operator==(const Corpus& other) const;
};

struct GenerateOptions {
  // Padded action width; 0 means the largest dof among the embodiments.
  int action_dim = 0;
  // Expert steps kept after first success so short episodes still chunk.
  int hold_steps = 16;
  // Fresh resets tried before an episode is reported as a failure.
  int resample_budget = 8;
};

// Scripted-expert corpus: every (embodiment, task) pair gets
// episodes_per_task successful episodes. Episode seeds derive from seed.
Corpus generate_corpus(const std::vector<EmbodimentSpec>& embodiments,
                       const std::vector<env::TaskSpec>& tasks, int episodes_per_task,
                       uint64_t seed, const GenerateOptions& options = {});

// State row for an env state, padded to action_dim joints.
Eigen::RowVectorXd observe(const EmbodimentSpec& arm, const env::EnvState& state, int action_dim);

std::vector<ActionChunk> chunk(const Trajectory& traj, int chunk_len, int stride,
                               int trajectory_index = 0);
std::vector<ActionChunk> chunk_corpus(const Corpus& corpus, int chunk_len, int stride);

struct NormStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;

  static constexpr double kStdFloor = 1e-6;

  Matrix apply(const Matrix& raw) const;
  Matrix invert(const Matrix& normalized) const;
  int dim() const { return static_cast<int>(mean.size()); }
};

NormStats fit_norm(const Corpus& corpus);
NormStats fit_norm(const std::vector<Matrix>& action_blocks);

inline constexpr char kCorpusMagic[4] = {'A', 'T', 'E', 'C'};
inline constexpr uint32_t kCorpusVersion = 1;

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace ate::corpus
