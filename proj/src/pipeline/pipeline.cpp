#include "ate/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <set>

#include <json.hpp>

#include "ate/diff/adam.hpp"
#include "ate/errors.hpp"
#include "ate/guidance/guidance.hpp"
#include "ate/vae/train.hpp"

namespace ate::pipeline {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// Stream indices for derive_seed. Baseline and ate share every stream.
enum : uint64_t {
  kCorpusPretrain = 1,
  kCorpusAdapt = 2,
  kVaePretrainInit = 3,
  kVaePretrainTrain = 4,
  kPriorDraws = 5,
  kVaeAdaptInit = 6,
  kVaeAdaptTrain = 7,
  kModeFit = 8,
  kPolicyInit = 10,      // + family
  kPolicyPretrain = 12,  // + family
  kFinetune = 20,        // + family
  kPerturb = 30,         // + family
  kEval = 40,
};

uint64_t fam(policy::Family f) { return f == policy::Family::diffusion ? 0 : 1; }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

// Averages a scalar over fixed windows and records one row per window.
class Window {
 public:
  Window(RunReport* report, uint64_t seed, std::string metric, long total, long offset = 0)
      : report_(report), seed_(seed), metric_(std::move(metric)), offset_(offset),
        every_(std::max(1L, total / 50)) {}

  void add(long step, double value) {
    sum_ += value;
    ++n_;
    if (report_ && (step % every_ == 0)) flush(step);
  }
  void finish(long step) {
    if (report_ && n_ > 0) flush(step);
  }

 private:
  void flush(long step) {
    report_->add(offset_ + step, seed_, metric_, sum_ / static_cast<double>(n_));
    sum_ = 0.0;
    n_ = 0;
  }
  RunReport* report_;
  uint64_t seed_;
  std::string metric_;
  long offset_;
  long every_;
  double sum_ = 0.0;
  long n_ = 0;
};

vae::VaeConfig vae_config(const RunConfig& cfg, const ChunkSet& data) {
  if (data.chunks.empty()) throw UsageError("no training chunks");
  vae::VaeConfig c = cfg.vae.model;
  c.chunk_len = static_cast<int>(data.chunks.front().rows());
  c.action_dim = static_cast<int>(data.chunks.front().cols());
  return c;
}

std::string role_of(const std::string& metadata) {
  if (metadata.empty()) return {};
  try {
    json j = json::parse(metadata);
    return j.value("role", std::string());
  } catch (const json::exception&) {
    return {};
  }
}

std::string with_role(const std::string& role, const corpus::NormStats& norm,
                      const std::map<std::string, std::string>& extra = {}) {
  json j = json::parse(norm_to_json(norm));
  j["role"] = role;
  for (const auto& [k, v] : extra) j[k] = v;
  return j.dump();
}

vae::ActionVae vae_layout(const vae::VaeCheckpoint& ckpt) {
  diff::ParamStore scratch;
  return vae::ActionVae::create(ckpt.config, scratch, ckpt.prefix);
}

policy::PolicyNet policy_layout(const policy::PolicyCheckpoint& ckpt) {
  diff::ParamStore scratch;
  return policy::PolicyNet::create(ckpt.config, scratch, ckpt.prefix);
}

vae::VaeCheckpoint train_vae_stage(const RunConfig& cfg, const ChunkSet& data, uint64_t init_seed,
                                   uint64_t train_seed, int steps,
                                   const std::optional<vae::PriorStats>& prior, RunReport* report,
                                   uint64_t seed, const std::string& metric) {
  vae::VaeCheckpoint ckpt;
  ckpt.config = vae_config(cfg, data);
  ckpt.params = diff::ParamStore(init_seed);
  vae::ActionVae model = vae::ActionVae::create(ckpt.config, ckpt.params, ckpt.prefix);
  vae::VaeTrainOptions opt;
  opt.steps = steps;
  opt.batch = cfg.vae.batch;
  opt.adam.learning_rate = cfg.vae.lr;
  opt.adam.weight_decay = cfg.vae.weight_decay;
  opt.seed = train_seed;
  Window loss(report, seed, metric + ".loss", steps);
  Window recon(report, seed, metric + ".recon", steps);
  Window kl(report, seed, metric + ".kl", steps);
  Window mmd(report, seed, metric + ".mmd", steps);
  vae::train_vae(model, ckpt.params, data.chunks, prior, opt, [&](const vae::VaeStepStats& s) {
    loss.add(s.step + 1, s.loss);
    recon.add(s.step + 1, s.recon);
    kl.add(s.step + 1, s.kl);
    mmd.add(s.step + 1, s.mmd);
  });
  loss.finish(steps);
  recon.finish(steps);
  kl.finish(steps);
  mmd.finish(steps);
  if (report) {
    report->add(steps, seed, metric + ".recon_rmse",
                vae::reconstruction_rmse(model, ckpt.params, data.chunks));
  }
  return ckpt;
}

policy::PolicyBatch draw_batch(const ChunkSet& data, const Matrix& flat, int batch, Rng& rng) {
  policy::PolicyBatch b;
  b.chunks.resize(batch, flat.cols());
  b.obs.resize(batch, data.obs.cols());
  b.tasks.resize(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const auto j = static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(flat.rows())));
    b.chunks.row(i) = flat.row(j);
    b.obs.row(i) = data.obs.row(j);
    b.tasks[static_cast<std::size_t>(i)] = data.tasks[static_cast<std::size_t>(j)];
  }
  return b;
}

struct TrainSpec {
  int steps = 0;
  uint64_t stream = 0;
  uint64_t perturb_stream = 0;
  Variant variant = Variant::baseline;
  const guidance::LatentEncoder* encoder = nullptr;
  std::string metric;
};

// Shared loop for policy pre-training and fine-tuning.
void train_policy(const RunConfig& cfg, policy::PolicyCheckpoint& ckpt, const ChunkSet& data,
                  const TrainSpec& spec, RunReport* report, uint64_t seed,
                  const CheckpointHook& hook, FinetuneTrace* trace) {
  const policy::PolicyNet net = policy_layout(ckpt);
  const Matrix flat = data.flat();
  if (flat.cols() != ckpt.config.flat_dim() || data.obs.cols() != ckpt.config.obs_dim) {
    throw DimensionError("train_policy: data widths differ from the policy");
  }
  diff::AdamConfig ac;
  ac.learning_rate = cfg.policy.lr;
  ac.weight_decay = cfg.policy.weight_decay;
  diff::Adam adam(ckpt.params, ac);
  Rng rng(spec.stream);
  Rng perturb_rng(spec.perturb_stream);
  const bool steered = spec.variant == Variant::ate;
  std::optional<policy::NoiseSchedule> sched;
  if (ckpt.family == policy::Family::diffusion) {
    sched = policy::NoiseSchedule::from_alphas(ckpt.schedule_alphas);
  }
  const policy::FlowTimeSampler sampler{cfg.flow.tau_min};
  const int batch = cfg.policy.batch;
  const int every = cfg.run.checkpoint_every;
  Window loss_w(report, seed, spec.metric + ".loss", spec.steps);
  Window dist_w(steered ? report : nullptr, seed, spec.metric + ".latent_distance", spec.steps);
  for (int s = 1; s <= spec.steps; ++s) {
    policy::PolicyBatch b = draw_batch(data, flat, batch, rng);
    diff::Tape tape;
    diff::Var loss;
    if (ckpt.family == policy::Family::diffusion) {
      policy::DiffusionNoise noise = policy::draw_diffusion_noise(rng, batch, flat.cols(), sched->steps());
      if (steered) {
        Matrix unit;
        if (cfg.guidance.perturbation_std > 0) {
          unit.resize(batch, spec.encoder->latent_dim);
          for (Eigen::Index i = 0; i < unit.size(); ++i) unit.data()[i] = perturb_rng.normal();
        }
        auto r = guidance::steered_diffusion_loss(tape, net, ckpt.params, b, *sched, noise,
                                                  *spec.encoder, cfg.guidance, unit);
        loss = r.loss;
        dist_w.add(s, r.mean_distance);
      } else {
        loss = policy::diffusion_loss(tape, net, ckpt.params, b, *sched, noise);
      }
    } else {
      policy::FlowNoise noise = policy::draw_flow_noise(rng, batch, flat.cols(), sampler);
      if (steered) {
        Matrix unit;
        if (cfg.guidance.perturbation_std > 0) {
          unit.resize(batch, spec.encoder->latent_dim);
          for (Eigen::Index i = 0; i < unit.size(); ++i) unit.data()[i] = perturb_rng.normal();
        }
        auto r = guidance::steered_flow_loss(tape, net, ckpt.params, b, noise, *spec.encoder,
                                             cfg.guidance, unit);
        loss = r.loss;
        dist_w.add(s, r.mean_distance);
      } else {
        loss = policy::flow_loss(tape, net, ckpt.params, b, noise);
      }
    }
    tape.backward(loss);
    adam.step(ckpt.params, tape.param_grads(ckpt.params));
    const double value = loss.scalar();
    if (trace) trace->losses.push_back(value);
    loss_w.add(s, value);
    if (hook && ((every > 0 && s % every == 0) || s == spec.steps)) hook(s, ckpt);
  }
  loss_w.finish(spec.steps);
  dist_w.finish(spec.steps);
  if (hook && spec.steps == 0) hook(0, ckpt);
}

void require_adapt_vae(const vae::VaeCheckpoint* adapt_vae) {
  if (!adapt_vae) {
    throw PipelineOrderError("stage 2 needs a trained adaptation VAE; run stage 1 first");
  }
  if (!adapt_vae->prior) {
    throw PipelineOrderError("stage 2 needs the prior statistics the adaptation VAE was aligned to");
  }
  if (role_of(adapt_vae->metadata) != "adapt") {
    throw PipelineOrderError("stage 2 needs an adaptation VAE checkpoint, got role '" +
                             role_of(adapt_vae->metadata) + "'");
  }
}

// Fixed so the streamed moments do not depend on the machine's core count.
constexpr int kPriorShards = 4;

std::string seed_dir_name(uint64_t seed) { return "seed" + std::to_string(seed); }

}  // namespace

// Data ----------------------------------------------------------------------

Corpora generate_corpora(const RunConfig& cfg, uint64_t seed) {
  const std::vector<env::TaskSpec> tasks{env::reach_task(), env::push_task()};
  const EmbodimentSpec target = four_link_arm();
  corpus::GenerateOptions opt;
  opt.action_dim = target.action_dim;
  Corpora c;
  c.pretrain = corpus::generate_corpus({two_link_arm(), three_link_arm()}, tasks,
                                       cfg.corpus.pretrain_episodes,
                                       derive_seed(seed, kCorpusPretrain), opt);
  c.adapt = corpus::generate_corpus({target}, tasks, cfg.corpus.adapt_episodes,
                                    derive_seed(seed, kCorpusAdapt), opt);
  return c;
}

void save_corpora(const Corpora& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  corpus::save_corpus(c.pretrain, dir / "pretrain.atec");
  corpus::save_corpus(c.adapt, dir / "adapt.atec");
}

Corpora load_corpora(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "pretrain.atec") || !std::filesystem::exists(dir / "adapt.atec")) {
    throw PipelineOrderError("no corpora under " + dir.string() + "; run gen-data first");
  }
  return {corpus::load_corpus(dir / "pretrain.atec"), corpus::load_corpus(dir / "adapt.atec")};
}

Matrix ChunkSet::flat() const {
  if (chunks.empty()) return {};
  const Eigen::Index w = chunks.front().size();
  Matrix out(static_cast<Eigen::Index>(chunks.size()), w);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(chunks[i].data(), w);
  }
  return out;
}

ChunkSet make_chunk_set(const corpus::Corpus& c, int chunk_len, int stride) {
  ChunkSet set;
  set.norm = corpus::fit_norm(c);
  std::vector<corpus::ActionChunk> raw = corpus::chunk_corpus(c, chunk_len, stride);
  if (raw.empty()) throw UsageError("make_chunk_set: corpus yields no chunks");
  set.obs.resize(static_cast<Eigen::Index>(raw.size()), c.state_dim());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& ch = raw[i];
    set.chunks.push_back(set.norm.apply(ch.values));
    set.obs.row(static_cast<Eigen::Index>(i)) =
        c.trajectories[static_cast<std::size_t>(ch.trajectory)].states.row(ch.start);
    set.tasks.push_back(ch.task_id);
  }
  return set;
}

ClusterData two_cluster_chunks(const ClusterProtocol& p, uint64_t seed) {
  if (p.pretrain_chunks < 2 || p.adapt_chunks < 1 || p.chunk_len < 1 || p.action_dim < 1) {
    throw UsageError("two_cluster_chunks: empty protocol");
  }
  const int flat = p.chunk_len * p.action_dim;
  Rng rng(seed);
  ClusterData d;
  d.direction.resize(flat);
  for (int i = 0; i < flat; ++i) d.direction(i) = rng.normal();
  d.direction /= d.direction.norm();
  auto fill = [&](ChunkSet& set, int n, bool both) {
    set.norm.mean = Eigen::RowVectorXd::Zero(p.action_dim);
    set.norm.stddev = Eigen::RowVectorXd::Ones(p.action_dim);
    set.obs = Matrix::Zero(n, 1);
    for (int i = 0; i < n; ++i) {
      const double sign = both && i % 2 == 1 ? -1.0 : 1.0;
      Eigen::RowVectorXd x = sign * p.separation * d.direction;
      for (int j = 0; j < flat; ++j) x(j) += p.noise * rng.normal();
      set.chunks.push_back(Eigen::Map<const Matrix>(x.data(), p.chunk_len, p.action_dim));
      set.tasks.push_back(0);
    }
  };
  fill(d.pretrain, p.pretrain_chunks, true);
  fill(d.adapt, p.adapt_chunks, false);
  return d;
}

std::string norm_to_json(const corpus::NormStats& n) {
  json j;
  j["mean"] = std::vector<double>(n.mean.data(), n.mean.data() + n.mean.size());
  j["std"] = std::vector<double>(n.stddev.data(), n.stddev.data() + n.stddev.size());
  return j.dump();
}

corpus::NormStats norm_from_json(const std::string& text) {
  try {
    json j = json::parse(text);
    auto mean = j.at("mean").get<std::vector<double>>();
    auto sd = j.at("std").get<std::vector<double>>();
    if (mean.size() != sd.size() || mean.empty()) throw FormatError("normalization stats have mismatched widths");
    corpus::NormStats n;
    n.mean = Eigen::Map<Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    n.stddev = Eigen::Map<Eigen::RowVectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    return n;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata lacks normalization stats: ") + e.what());
  }
}

SeedArtifacts prepare_data(const RunConfig& cfg, uint64_t seed) {
  SeedArtifacts a;
  a.corpora = generate_corpora(cfg, seed);
  a.pre_data = make_chunk_set(a.corpora.pretrain, cfg.corpus.chunk_len, cfg.corpus.stride);
  a.adapt_data = make_chunk_set(a.corpora.adapt, cfg.corpus.chunk_len, cfg.corpus.stride);
  return a;
}

// Stage 1 -------------------------------------------------------------------

vae::VaeCheckpoint train_pretrain_vae(const RunConfig& cfg, const ChunkSet& data, uint64_t seed,
                                      RunReport* report) {
  vae::VaeCheckpoint ckpt =
      train_vae_stage(cfg, data, derive_seed(seed, kVaePretrainInit),
                      derive_seed(seed, kVaePretrainTrain), cfg.vae.pretrain_steps, std::nullopt,
                      report, seed, "vae.pretrain");
  ckpt.metadata = with_role("pretrain", data.norm);
  return ckpt;
}

void attach_prior(const RunConfig& cfg, vae::VaeCheckpoint& pretrain, const ChunkSet& data,
                  uint64_t seed) {
  if (role_of(pretrain.metadata) != "pretrain") {
    throw PipelineOrderError("prior statistics come from the pretrain VAE; run train-vae first");
  }
  const vae::ActionVae model = vae_layout(pretrain);
  pretrain.prior = vae::estimate_prior(model, pretrain.params, data.chunks,
                                       derive_seed(seed, kPriorDraws), cfg.vae.prior_diagonal,
                                       cfg.vae.prior_floor, kPriorShards);
}

vae::VaeCheckpoint train_adapt_vae(const RunConfig& cfg, const ChunkSet& data,
                                   const vae::VaeCheckpoint* pretrain, uint64_t seed,
                                   PriorTarget target, RunReport* report) {
  vae::PriorStats prior;
  if (target == PriorTarget::pretrain_latents) {
    if (!pretrain || !pretrain->prior) {
      throw PipelineOrderError("the adaptation VAE needs prior statistics; run estimate-prior first");
    }
    prior = *pretrain->prior;
  } else {
    prior = vae::PriorStats::standard_normal(cfg.vae.model.latent_dim);
  }
  if (prior.dim() != cfg.vae.model.latent_dim) {
    throw DimensionError("prior statistics width differs from vae.latent_dim");
  }
  const std::string metric =
      target == PriorTarget::pretrain_latents ? "vae.adapt" : "vae.adapt_single_stage";
  vae::VaeCheckpoint ckpt = train_vae_stage(cfg, data, derive_seed(seed, kVaeAdaptInit),
                                            derive_seed(seed, kVaeAdaptTrain),
                                            cfg.vae.adapt_steps, prior, report, seed, metric);
  ckpt.prior = prior;
  ckpt.metadata = with_role(
      "adapt", data.norm,
      {{"prior_target", target == PriorTarget::pretrain_latents ? "pretrain_latents" : "standard_normal"}});
  return ckpt;
}

Matrix encode_means(const vae::VaeCheckpoint& ckpt, const std::vector<Matrix>& chunks) {
  const vae::ActionVae model = vae_layout(ckpt);
  std::vector<vae::LatentGaussian> post = model.encode_many(ckpt.params, chunks);
  Matrix m(static_cast<Eigen::Index>(post.size()), ckpt.config.latent_dim);
  for (std::size_t i = 0; i < post.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = post[i].mean;
  return m;
}

ModeHistogram latent_mode_histogram(const vae::VaeCheckpoint& pretrain, const ChunkSet& pre_data,
                                    const vae::VaeCheckpoint& adapt, const ChunkSet& adapt_data,
                                    uint64_t seed, int components) {
  const Mixture mix =
      fit_mixture(encode_means(pretrain, pre_data.chunks), components, derive_seed(seed, kModeFit));
  return assign_modes(mix, encode_means(adapt, adapt_data.chunks));
}

Stage1Result run_stage1(const RunConfig& cfg, const ChunkSet& pre_data, const ChunkSet& adapt_data,
                        uint64_t seed, RunReport* report, const Logger& log) {
  const auto t0 = Clock::now();
  Stage1Result r;
  say(log, "seed " + std::to_string(seed) + ": training pretrain VAE");
  r.pretrain = train_pretrain_vae(cfg, pre_data, seed, report);
  say(log, "seed " + std::to_string(seed) + ": estimating prior");
  attach_prior(cfg, r.pretrain, pre_data, seed);
  say(log, "seed " + std::to_string(seed) + ": training adaptation VAE");
  r.adapt = train_adapt_vae(cfg, adapt_data, &r.pretrain, seed, PriorTarget::pretrain_latents, report);
  r.modes = latent_mode_histogram(r.pretrain, pre_data, r.adapt, adapt_data, seed);
  if (report) {
    const long step = cfg.vae.adapt_steps;
    report->add(step, seed, "vae.modes.exactly_one", r.modes.exactly_one_fraction());
    report->add(step, seed, "vae.modes.dominant", r.modes.dominant_fraction());
    report->add(step, seed, "vae.modes.none",
                static_cast<double>(r.modes.none) / static_cast<double>(std::max(1L, r.modes.total)));
    report->add(step, seed, "vae.modes.multiple",
                static_cast<double>(r.modes.multiple) / static_cast<double>(std::max(1L, r.modes.total)));
    report->wall_seconds["stage1"] += seconds_since(t0);
  }
  return r;
}

// Stage 2 -------------------------------------------------------------------

policy::PolicyCheckpoint pretrain_policy(const RunConfig& cfg, policy::Family family,
                                         const ChunkSet& data, uint64_t seed, RunReport* report) {
  if (data.chunks.empty()) throw UsageError("pretrain_policy: no chunks");
  policy::PolicyCheckpoint ckpt;
  ckpt.family = family;
  ckpt.config.chunk_len = static_cast<int>(data.chunks.front().rows());
  ckpt.config.action_dim = static_cast<int>(data.chunks.front().cols());
  ckpt.config.obs_dim = static_cast<int>(data.obs.cols());
  ckpt.config.num_tasks = 2;
  ckpt.config.width = cfg.policy.width;
  ckpt.config.blocks = cfg.policy.blocks;
  ckpt.config.time_dim = cfg.policy.time_dim;
  ckpt.config.task_dim = cfg.policy.task_dim;
  ckpt.params = diff::ParamStore(derive_seed(seed, kPolicyInit + fam(family)));
  policy::PolicyNet::create(ckpt.config, ckpt.params, ckpt.prefix);
  if (family == policy::Family::diffusion) ckpt.schedule_alphas = cfg.diffusion.schedule().alphas();
  TrainSpec spec;
  spec.steps = cfg.policy.pretrain_steps;
  spec.stream = derive_seed(seed, kPolicyPretrain + fam(family));
  spec.metric = std::string(policy::to_string(family)) + ".pretrain";
  train_policy(cfg, ckpt, data, spec, report, seed, {}, nullptr);
  ckpt.metadata = with_role("policy_pretrain", data.norm);
  return ckpt;
}

policy::PolicyCheckpoint run_stage2(const RunConfig& cfg, const policy::PolicyCheckpoint& pretrained,
                                    const ChunkSet& data, const vae::VaeCheckpoint* adapt_vae,
                                    Variant variant, uint64_t seed, RunReport* report,
                                    const CheckpointHook& hook, FinetuneTrace* trace) {
  require_adapt_vae(adapt_vae);
  if (role_of(pretrained.metadata) != "policy_pretrain") {
    throw PipelineOrderError("stage 2 fine-tunes a pretrained policy checkpoint");
  }
  const vae::ActionVae model = vae_layout(*adapt_vae);
  if (adapt_vae->config.chunk_len * adapt_vae->config.action_dim != pretrained.config.flat_dim()) {
    throw DimensionError("adaptation VAE chunk shape differs from the policy");
  }
  const guidance::LatentEncoder enc = guidance::LatentEncoder::vae_means(model, adapt_vae->params);
  policy::PolicyCheckpoint ckpt = pretrained;
  ckpt.metadata = with_role("policy_finetune", data.norm, {{"variant", to_string(variant)}});
  const uint64_t f = fam(ckpt.family);
  TrainSpec spec;
  spec.steps = cfg.policy.finetune_steps;
  spec.stream = derive_seed(seed, kFinetune + f);
  spec.perturb_stream = derive_seed(seed, kPerturb + f);
  spec.variant = variant;
  spec.encoder = &enc;
  spec.metric = std::string(policy::to_string(ckpt.family)) + "." + to_string(variant);
  train_policy(cfg, ckpt, data, spec, report, seed, hook, trace);
  return ckpt;
}

// End to end ----------------------------------------------------------------

namespace {

void record_eval(RunReport& report, uint64_t seed, const std::string& prefix, long step,
                 const EvalResult& r) {
  report.add(step, seed, prefix + ".success", r.success_rate());
  report.add(step, seed, prefix + ".mean_steps", r.mean_steps);
}

RunReport run_seed_impl(const RunConfig& cfg, uint64_t seed, const Logger& log,
                        const std::filesystem::path& checkpoint_dir, bool ablation) {
  cfg.validate();
  RunReport report;
  const int threads = resolved_threads(cfg.run);
  const uint64_t eval_stream = eval_seed(seed);
  const std::string tag = "seed " + std::to_string(seed) + ": ";
  const std::filesystem::path dir =
      checkpoint_dir.empty() ? std::filesystem::path() : checkpoint_dir / seed_dir_name(seed);
  if (!dir.empty()) std::filesystem::create_directories(dir);

  auto t0 = Clock::now();
  say(log, tag + "generating corpora");
  SeedArtifacts data = prepare_data(cfg, seed);
  report.wall_seconds["data"] += seconds_since(t0);

  std::optional<Stage1Result> s1;
  if (cfg.run.stage == Stage::stage2) {
    if (dir.empty() || !std::filesystem::exists(dir / "vae_adapt.ckpt")) {
      throw PipelineOrderError("stage2 needs the stage 1 checkpoints under " +
                               (dir.empty() ? std::string("<no checkpoint dir>") : dir.string()));
    }
    s1.emplace();
    s1->adapt = vae::load_vae((dir / "vae_adapt.ckpt").string());
  } else {
    s1 = run_stage1(cfg, data.pre_data, data.adapt_data, seed, &report, log);
    if (!dir.empty()) {
      vae::save_vae((dir / "vae_pretrain.ckpt").string(), s1->pretrain);
      vae::save_vae((dir / "vae_adapt.ckpt").string(), s1->adapt);
    }
    if (cfg.run.stage == Stage::stage1) return report;
  }

  std::optional<vae::VaeCheckpoint> single;
  if (ablation) {
    if (s1->pretrain.params.size() == 0 && cfg.run.stage == Stage::stage2) {
      throw UsageError("the ablation trains stage 1 itself; run it with run.stage = all");
    }
    say(log, tag + "training single-stage adaptation VAE");
    t0 = Clock::now();
    single = train_adapt_vae(cfg, data.adapt_data, nullptr, seed, PriorTarget::standard_normal, &report);
    report.wall_seconds["stage1"] += seconds_since(t0);
  }

  for (policy::Family family : cfg.run.families) {
    const std::string fname = policy::to_string(family);
    say(log, tag + "pretraining " + fname + " policy");
    t0 = Clock::now();
    const policy::PolicyCheckpoint pre = pretrain_policy(cfg, family, data.pre_data, seed, &report);
    report.wall_seconds["policy_pretrain"] += seconds_since(t0);
    if (!dir.empty()) policy::save_policy((dir / (fname + "_pretrain.ckpt")).string(), pre);

    std::optional<EvalResult> before;
    if (cfg.run.checkpoint_every > 0) {
      t0 = Clock::now();
      before = evaluate(pre, cfg, eval_stream, threads);
      report.wall_seconds["eval"] += seconds_since(t0);
    }

    std::vector<Variant> variants = cfg.run.variants;
    if (ablation && std::find(variants.begin(), variants.end(), Variant::ate) == variants.end()) {
      variants.push_back(Variant::ate);
    }
    double ate_final = 0.0;
    for (Variant v : variants) {
      const std::string prefix = fname + "." + to_string(v);
      say(log, tag + "fine-tuning " + prefix);
      if (before && cfg.policy.finetune_steps > 0) record_eval(report, seed, prefix, 0, *before);
      double eval_time = 0.0;
      EvalResult last;
      auto hook = [&](long step, const policy::PolicyCheckpoint& ck) {
        const auto te = Clock::now();
        last = evaluate(ck, cfg, eval_stream, threads);
        record_eval(report, seed, prefix, step, last);
        eval_time += seconds_since(te);
      };
      t0 = Clock::now();
      policy::PolicyCheckpoint fin = run_stage2(cfg, pre, data.adapt_data, &s1->adapt, v, seed, &report, hook);
      report.wall_seconds["stage2"] += seconds_since(t0) - eval_time;
      report.wall_seconds["eval"] += eval_time;
      if (!dir.empty()) policy::save_policy((dir / (prefix + ".ckpt")).string(), fin);
      if (v == Variant::ate) ate_final = last.success_rate();
      say(log, tag + prefix + " success " + std::to_string(last.success_rate()));
    }
    if (ablation) {
      const long steps = cfg.policy.finetune_steps;
      report.add(steps, seed, fname + ".ablation.two_stage.success", ate_final);
      say(log, tag + "fine-tuning " + fname + " with the single-stage VAE");
      t0 = Clock::now();
      policy::PolicyCheckpoint fin = run_stage2(cfg, pre, data.adapt_data, &*single, Variant::ate, seed, nullptr);
      report.wall_seconds["stage2"] += seconds_since(t0);
      t0 = Clock::now();
      const EvalResult r = evaluate(fin, cfg, eval_stream, threads);
      report.wall_seconds["eval"] += seconds_since(t0);
      report.add(steps, seed, fname + ".ablation.single_stage.success", r.success_rate());
      say(log, tag + fname + " single-stage success " + std::to_string(r.success_rate()));
    }
  }
  return report;
}

}  // namespace

uint64_t eval_seed(uint64_t seed) { return derive_seed(seed, kEval); }

RunReport run_seed(const RunConfig& cfg, uint64_t seed, const Logger& log,
                   const std::filesystem::path& checkpoint_dir) {
  return run_seed_impl(cfg, seed, log, checkpoint_dir, false);
}

RunReport run_ablation_seed(const RunConfig& cfg, uint64_t seed, const Logger& log) {
  RunConfig c = cfg;
  c.run.variants = {Variant::ate};
  c.run.stage = Stage::all;
  return run_seed_impl(c, seed, log, {}, true);
}

RunReport run_pipeline(const RunConfig& cfg, bool with_ablation, const Logger& log,
                       const std::filesystem::path& checkpoint_dir) {
  cfg.validate();
  RunReport all;
  for (uint64_t seed : cfg.run.seeds) {
    all.append(run_seed_impl(cfg, seed, log, checkpoint_dir, with_ablation));
  }
  all.normalize();
  return all;
}

PairedComparison compare_paired(const RunReport& report, const std::string& metric_a,
                                const std::string& metric_b) {
  std::set<uint64_t> seeds;
  for (const auto& r : report.rows) {
    if (r.metric == metric_a) seeds.insert(r.seed);
  }
  PairedComparison c;
  for (uint64_t s : seeds) {
    if (report.series(metric_b, s).empty()) continue;
    const double a = report.final_value(metric_a, s);
    const double b = report.final_value(metric_b, s);
    ++c.seeds;
    if (a >= b) ++c.wins;
    c.mean_a += a;
    c.mean_b += b;
  }
  if (c.seeds > 0) {
    c.mean_a /= c.seeds;
    c.mean_b /= c.seeds;
  }
  return c;
}

}  // namespace ate::pipeline
