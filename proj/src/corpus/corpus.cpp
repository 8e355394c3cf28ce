#include "ate/corpus/corpus.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "ate/binary_io.hpp"
#include "ate/errors.hpp"
#include "ate/rng.hpp"

namespace ate::corpus {
namespace {

using nlohmann::json;

struct Episode {
  Trajectory traj;
  bool ok = false;
};

Episode run_expert(const EmbodimentSpec& arm, const env::TaskSpec& task, int action_dim,
                   int hold_steps, uint64_t seed) {
  env::EnvState s = env::reset(arm, task, seed);
  std::vector<Eigen::RowVectorXd> states;
  std::vector<Eigen::RowVectorXd> actions;
  int success_at = -1;
  const int limit = task.max_steps + hold_steps;
  for (int t = 0; t < limit; ++t) {
    states.push_back(observe(arm, s, action_dim));
    const Eigen::VectorXd delta = env::scripted_expert(arm, s, task);
    env::EnvState next = env::step(arm, s, delta);
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(action_dim);
    if (arm.action_repr == ActionRepr::joint_deltas) {
      a.head(arm.dof) = delta.transpose();
    } else {
      a.head(arm.dof) = next.joint_angles.transpose();
    }
    actions.push_back(std::move(a));
    s = std::move(next);
    if (success_at < 0 && env::success(arm, s, task)) success_at = t;
    if (success_at < 0 && t + 1 >= task.max_steps) break;
    if (success_at >= 0 && t >= success_at + hold_steps) break;
  }
  Episode ep;
  // The held tail must still satisfy the predicate.
  ep.ok = success_at >= 0 && env::success(arm, s, task);
  ep.traj.embodiment_id = arm.id;
  ep.traj.task_id = task.task_id;
  ep.traj.success = ep.ok;
  const auto T = static_cast<Eigen::Index>(actions.size());
  ep.traj.states.resize(T, action_dim + 6);
  ep.traj.actions.resize(T, action_dim);
  for (Eigen::Index t = 0; t < T; ++t) {
    ep.traj.states.row(t) = states[static_cast<std::size_t>(t)];
    ep.traj.actions.row(t) = actions[static_cast<std::size_t>(t)];
  }
  return ep;
}

json embodiment_json(const EmbodimentSpec& e) {
  return json{{"id", e.id},
              {"dof", e.dof},
              {"link_lengths", e.link_lengths},
              {"action_repr", to_string(e.action_repr)},
              {"action_dim", e.action_dim}};
}

EmbodimentSpec embodiment_from_json(const json& j) {
  EmbodimentSpec e;
  e.id = j.at("id").get<std::string>();
  e.dof = j.at("dof").get<int>();
  e.link_lengths = j.at("link_lengths").get<std::vector<double>>();
  e.action_repr = action_repr_from_string(j.at("action_repr").get<std::string>());
  e.action_dim = j.at("action_dim").get<int>();
  e.validate();
  return e;
}

}  // namespace

const EmbodimentSpec& Corpus::embodiment(const std::string& id) const {
  for (const auto& e : embodiments) {
    if (e.id == id) return e;
  }
  throw UsageError("corpus has no embodiment '" + id + "'");
}

void Corpus::validate() const {
  for (const auto& e : embodiments) {
    if (e.action_dim > action_dim) {
      throw DimensionError("corpus: embodiment '" + e.id + "' is wider than the corpus");
    }
  }
  for (const auto& t : trajectories) {
    if (t.actions.cols() != action_dim) {
      throw DimensionError("corpus: trajectory action width " + std::to_string(t.actions.cols()) +
                           " does not match corpus width " + std::to_string(action_dim));
    }
    if (t.states.cols() != state_dim() || t.states.rows() != t.actions.rows()) {
      throw DimensionError("corpus: trajectory state array has the wrong shape");
    }
    if (!t.actions.allFinite()) throw DimensionError("corpus: non-finite action");
    embodiment(t.embodiment_id);
  }
}

bool Corpus::operator==(const Corpus& other) const {
  if (action_dim != other.action_dim || trajectories.size() != other.trajectories.size() ||
      embodiments.size() != other.embodiments.size()) {
    return false;
  }
  for (std::size_t i = 0; i < embodiments.size(); ++i) {
    const auto& a = embodiments[i];
    const auto& b = other.embodiments[i];
    if (a.id != b.id || a.dof != b.dof || a.link_lengths != b.link_lengths ||
        a.action_repr != b.action_repr || a.action_dim != b.action_dim) {
      return false;
    }
  }
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& a = trajectories[i];
    const auto& b = other.trajectories[i];
    if (a.embodiment_id != b.embodiment_id || a.task_id != b.task_id || a.success != b.success ||
        a.states != b.states || a.actions != b.actions) {
      return false;
    }
  }
  return true;
}

Eigen::RowVectorXd observe(const EmbodimentSpec& arm, const env::EnvState& state, int action_dim) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(action_dim + 6);
  row.head(arm.dof) = state.joint_angles.transpose();
  const Eigen::Vector2d ee = env::forward_kinematics(arm, state.joint_angles);
  row.segment(action_dim, 2) = ee.transpose();
  row.segment(action_dim + 2, 2) = state.target.transpose();
  row.segment(action_dim + 4, 2) = state.block.transpose();
  return row;
}

Corpus generate_corpus(const std::vector<EmbodimentSpec>& embodiments,
                       const std::vector<env::TaskSpec>& tasks, int episodes_per_task,
                       uint64_t seed, const GenerateOptions& options) {
  if (episodes_per_task < 1) throw GenerationError("generate_corpus: episodes_per_task must be >= 1");
  if (embodiments.empty() || tasks.empty()) {
    throw GenerationError("generate_corpus: need at least one embodiment and one task");
  }
  Corpus corpus;
  corpus.embodiments = embodiments;
  int widest = 0;
  for (const auto& e : embodiments) {
    e.validate();
    widest = std::max(widest, e.action_dim);
  }
  corpus.action_dim = options.action_dim > 0 ? options.action_dim : widest;
  if (corpus.action_dim < widest) {
    throw DimensionError("generate_corpus: action_dim narrower than an embodiment");
  }
  uint64_t episode_index = 0;
  for (const auto& arm : embodiments) {
    for (const auto& task : tasks) {
      for (int ep = 0; ep < episodes_per_task; ++ep, ++episode_index) {
        bool done = false;
        for (int attempt = 0; attempt <= options.resample_budget && !done; ++attempt) {
          const uint64_t ep_seed =
              derive_seed(seed, episode_index * 1024 + static_cast<uint64_t>(attempt));
          Episode e = run_expert(arm, task, corpus.action_dim, options.hold_steps, ep_seed);
          if (e.ok) {
            corpus.trajectories.push_back(std::move(e.traj));
            done = true;
          }
        }
        if (!done) {
          throw GenerationError("generate_corpus: expert failed on embodiment '" + arm.id +
                                "', task " + std::to_string(task.task_id) + ", episode " +
                                std::to_string(ep) + ", seed " + std::to_string(seed));
        }
      }
    }
  }
  return corpus;
}

std::vector<ActionChunk> chunk(const Trajectory& traj, int chunk_len, int stride,
                               int trajectory_index) {
  if (stride < 1) throw UsageError("chunk: stride must be >= 1");
  if (chunk_len < 1) throw UsageError("chunk: chunk_len must be >= 1");
  std::vector<ActionChunk> out;
  const auto T = static_cast<int>(traj.length());
  if (chunk_len > T) return out;
  for (int start = 0; start + chunk_len <= T; start += stride) {
    ActionChunk c;
    c.values = traj.actions.middleRows(start, chunk_len);
    c.embodiment_id = traj.embodiment_id;
    c.task_id = traj.task_id;
    c.trajectory = trajectory_index;
    c.start = start;
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ActionChunk> chunk_corpus(const Corpus& corpus, int chunk_len, int stride) {
  std::vector<ActionChunk> out;
  for (std::size_t i = 0; i < corpus.trajectories.size(); ++i) {
    auto part = chunk(corpus.trajectories[i], chunk_len, stride, static_cast<int>(i));
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

Matrix NormStats::apply(const Matrix& raw) const {
  if (raw.cols() != mean.size()) throw DimensionError("apply_norm: width mismatch");
  return (raw.rowwise() - mean).array().rowwise() / stddev.array();
}

Matrix NormStats::invert(const Matrix& normalized) const {
  if (normalized.cols() != mean.size()) throw DimensionError("invert_norm: width mismatch");
  return (normalized.array().rowwise() * stddev.array()).matrix().rowwise() + mean;
}

NormStats fit_norm(const std::vector<Matrix>& action_blocks) {
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (const auto& b : action_blocks) {
    if (cols >= 0 && b.cols() != cols) throw DimensionError("fit_norm: width mismatch");
    cols = b.cols();
    rows += b.rows();
  }
  if (rows == 0) throw UsageError("fit_norm: empty corpus");
  NormStats s;
  s.mean = Eigen::RowVectorXd::Zero(cols);
  for (const auto& b : action_blocks) s.mean += b.colwise().sum();
  s.mean /= static_cast<double>(rows);
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(cols);
  for (const auto& b : action_blocks) var += (b.rowwise() - s.mean).array().square().matrix().colwise().sum();
  var /= static_cast<double>(rows);
  s.stddev = var.cwiseSqrt().cwiseMax(NormStats::kStdFloor);
  return s;
}

NormStats fit_norm(const Corpus& corpus) {
  std::vector<Matrix> blocks;
  blocks.reserve(corpus.trajectories.size());
  for (const auto& t : corpus.trajectories) blocks.push_back(t.actions);
  return fit_norm(blocks);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  corpus.validate();
  json meta;
  meta["action_dim"] = corpus.action_dim;
  meta["state_dim"] = corpus.state_dim();
  meta["embodiments"] = json::array();
  for (const auto& e : corpus.embodiments) meta["embodiments"].push_back(embodiment_json(e));
  meta["trajectories"] = json::array();
  for (const auto& t : corpus.trajectories) {
    meta["trajectories"].push_back(
        json{{"embodiment", t.embodiment_id}, {"task", t.task_id}, {"success", t.success}});
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_corpus: cannot open " + path.string());
  io::Writer w(out);
  w.bytes(kCorpusMagic, 4);
  w.u32(kCorpusVersion);
  w.str(meta.dump());
  w.u64(corpus.trajectories.size());
  for (const auto& t : corpus.trajectories) {
    w.matrix_f32(t.states);
    w.matrix_f32(t.actions);
  }
  if (!out) throw std::runtime_error("save_corpus: write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_corpus: cannot open " + path.string());
  io::Reader r(in);
  io::expect_magic(r, kCorpusMagic, "corpus");
  io::expect_version(r, kCorpusVersion, "corpus");
  json meta;
  try {
    meta = json::parse(r.str());
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("corpus: bad metadata block: ") + e.what());
  }
  Corpus c;
  try {
    c.action_dim = meta.at("action_dim").get<int>();
    for (const auto& e : meta.at("embodiments")) c.embodiments.push_back(embodiment_from_json(e));
    const uint64_t n = r.u64();
    const auto& tmeta = meta.at("trajectories");
    if (n != tmeta.size()) throw CorruptionError("corpus: trajectory count mismatch");
    for (uint64_t i = 0; i < n; ++i) {
      Trajectory t;
      t.embodiment_id = tmeta[i].at("embodiment").get<std::string>();
      t.task_id = tmeta[i].at("task").get<int>();
      t.success = tmeta[i].at("success").get<bool>();
      t.states = r.matrix_f32();
      t.actions = r.matrix_f32();
      c.trajectories.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("corpus: bad metadata: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace ate::corpus
