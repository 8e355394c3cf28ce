#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ate/errors.hpp"
#include "ate/pipeline/pipeline.hpp"
#include "ate/vae/train.hpp"

namespace ate::cli {
namespace fs = std::filesystem;
using namespace ate::pipeline;

namespace {

struct Invocation {
  std::string subcommand;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string preset = "default";
  long long seed = -1;
  int threads = -1;
  bool quiet = false;
  bool ablation = false;
};

struct Context {
  RunConfig cfg;
  fs::path out;
  std::ostream& out_stream;
  Logger log;

  fs::path data_dir(uint64_t seed) const { return out / "data" / ("seed" + std::to_string(seed)); }
  fs::path ckpt_dir(uint64_t seed) const {
    return out / "checkpoints" / ("seed" + std::to_string(seed));
  }
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

RunConfig resolve_config(const Invocation& inv) {
  RunConfig cfg;
  if (inv.preset == "micro") {
    cfg = micro_config();
  } else if (inv.preset == "desk") {
    cfg = desk_config();
  } else if (inv.preset != "default") {
    throw ConfigError("unknown preset '" + inv.preset + "' (expected default, micro or desk)");
  }
  // Keys in the file override the preset.
  if (!inv.config_path.empty()) cfg = load_config(inv.config_path, cfg);
  for (const auto& o : inv.overrides) cfg.apply_override(o);
  if (inv.seed >= 0) cfg.run.seeds = {static_cast<uint64_t>(inv.seed)};
  if (inv.threads >= 0) cfg.run.threads = inv.threads;
  cfg.validate();
  return cfg;
}

vae::VaeCheckpoint load_required_vae(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw PipelineOrderError("missing " + path.string() + "; run " + producer + " first");
  }
  return vae::load_vae(path.string());
}

void emit(Context& ctx, const RunReport& report, const std::string& name) {
  const fs::path dir = name.empty() ? ctx.out : ctx.out / name;
  emit_report(report, dir);
  ctx.log("wrote " + (dir / "report.csv").string());
}

void print_comparisons(Context& ctx, const RunReport& report) {
  auto line = [&](const std::string& a, const std::string& b) {
    PairedComparison c = compare_paired(report, a, b);
    if (c.seeds == 0) return;
    ctx.out_stream << a << " >= " << b << " on " << c.wins << "/" << c.seeds << " seeds (mean "
                   << fmt(c.mean_a) << " vs " << fmt(c.mean_b) << ")\n";
  };
  for (auto f : {"diffusion", "flow"}) {
    const std::string fam = f;
    line(fam + ".ate.success", fam + ".baseline.success");
    line(fam + ".ablation.two_stage.success", fam + ".ablation.single_stage.success");
  }
}

int cmd_gen_data(Context& ctx) {
  for (uint64_t seed : ctx.cfg.run.seeds) {
    Corpora c = generate_corpora(ctx.cfg, seed);
    save_corpora(c, ctx.data_dir(seed));
    ctx.out_stream << "seed " << seed << ": " << c.pretrain.trajectories.size()
                   << " pretrain and " << c.adapt.trajectories.size()
                   << " adaptation episodes -> " << ctx.data_dir(seed).string() << "\n";
  }
  return kOk;
}

std::pair<ChunkSet, ChunkSet> load_chunks(const Context& ctx, uint64_t seed) {
  Corpora c = load_corpora(ctx.data_dir(seed));
  return {make_chunk_set(c.pretrain, ctx.cfg.corpus.chunk_len, ctx.cfg.corpus.stride),
          make_chunk_set(c.adapt, ctx.cfg.corpus.chunk_len, ctx.cfg.corpus.stride)};
}

int cmd_train_vae(Context& ctx) {
  RunReport report;
  for (uint64_t seed : ctx.cfg.run.seeds) {
    auto [pre, adapt] = load_chunks(ctx, seed);
    ctx.log("seed " + std::to_string(seed) + ": training pretrain VAE");
    vae::VaeCheckpoint ckpt = train_pretrain_vae(ctx.cfg, pre, seed, &report);
    fs::create_directories(ctx.ckpt_dir(seed));
    vae::save_vae((ctx.ckpt_dir(seed) / "vae_pretrain.ckpt").string(), ckpt);
    ctx.out_stream << "seed " << seed << ": pretrain VAE reconstruction rmse "
                   << fmt(report.final_value("vae.pretrain.recon_rmse", seed)) << "\n";
  }
  emit(ctx, report, "train-vae");
  return kOk;
}

int cmd_estimate_prior(Context& ctx) {
  for (uint64_t seed : ctx.cfg.run.seeds) {
    const fs::path path = ctx.ckpt_dir(seed) / "vae_pretrain.ckpt";
    vae::VaeCheckpoint ckpt = load_required_vae(path, "train-vae");
    auto [pre, adapt] = load_chunks(ctx, seed);
    attach_prior(ctx.cfg, ckpt, pre, seed);
    vae::save_vae(path.string(), ckpt);
    ctx.out_stream << "seed " << seed << ": prior over " << ckpt.prior->count
                   << " latents, |mean| " << fmt(ckpt.prior->mean.norm()) << ", mean variance "
                   << fmt(ckpt.prior->cov.diagonal().mean()) << "\n";
  }
  return kOk;
}

int cmd_train_adapt_vae(Context& ctx) {
  RunReport report;
  for (uint64_t seed : ctx.cfg.run.seeds) {
    vae::VaeCheckpoint pre_ckpt =
        load_required_vae(ctx.ckpt_dir(seed) / "vae_pretrain.ckpt", "train-vae");
    auto [pre, adapt] = load_chunks(ctx, seed);
    ctx.log("seed " + std::to_string(seed) + ": training adaptation VAE");
    vae::VaeCheckpoint ckpt = train_adapt_vae(ctx.cfg, adapt, &pre_ckpt, seed,
                                              PriorTarget::pretrain_latents, &report);
    vae::save_vae((ctx.ckpt_dir(seed) / "vae_adapt.ckpt").string(), ckpt);
    ModeHistogram h = latent_mode_histogram(pre_ckpt, pre, ckpt, adapt, seed);
    report.add(ctx.cfg.vae.adapt_steps, seed, "vae.modes.exactly_one", h.exactly_one_fraction());
    ctx.out_stream << "seed " << seed << ": " << fmt(100.0 * h.exactly_one_fraction())
                   << "% of adaptation latents lie within radius 3 of exactly one mode\n";
  }
  emit(ctx, report, "train-adapt-vae");
  return kOk;
}

int cmd_train_policy(Context& ctx) {
  RunReport report;
  const int threads = resolved_threads(ctx.cfg.run);
  for (uint64_t seed : ctx.cfg.run.seeds) {
    vae::VaeCheckpoint adapt_vae =
        load_required_vae(ctx.ckpt_dir(seed) / "vae_adapt.ckpt", "train-adapt-vae");
    auto [pre, adapt] = load_chunks(ctx, seed);
    const uint64_t eval_stream = eval_seed(seed);
    for (auto family : ctx.cfg.run.families) {
      const std::string fam = policy::to_string(family);
      const fs::path pre_path = ctx.ckpt_dir(seed) / (fam + "_pretrain.ckpt");
      policy::PolicyCheckpoint pol;
      if (fs::exists(pre_path)) {
        pol = policy::load_policy(pre_path.string());
      } else {
        ctx.log("seed " + std::to_string(seed) + ": pretraining " + fam + " policy");
        pol = pretrain_policy(ctx.cfg, family, pre, seed, &report);
        policy::save_policy(pre_path.string(), pol);
      }
      for (auto variant : ctx.cfg.run.variants) {
        const std::string prefix = fam + "." + to_string(variant);
        ctx.log("seed " + std::to_string(seed) + ": fine-tuning " + prefix);
        CheckpointHook hook;
        if (ctx.cfg.run.checkpoint_every > 0) {
          hook = [&](long step, const policy::PolicyCheckpoint& ck) {
            report.add(step, seed, prefix + ".success",
                       evaluate(ck, ctx.cfg, eval_stream, threads).success_rate());
          };
        }
        policy::PolicyCheckpoint fin =
            run_stage2(ctx.cfg, pol, adapt, &adapt_vae, variant, seed, &report, hook);
        policy::save_policy((ctx.ckpt_dir(seed) / (prefix + ".ckpt")).string(), fin);
      }
    }
  }
  emit(ctx, report, "train-policy");
  return kOk;
}

int cmd_eval(Context& ctx) {
  RunReport report;
  const int threads = resolved_threads(ctx.cfg.run);
  int found = 0;
  for (uint64_t seed : ctx.cfg.run.seeds) {
    for (auto family : ctx.cfg.run.families) {
      for (auto variant : ctx.cfg.run.variants) {
        const std::string prefix = std::string(policy::to_string(family)) + "." + to_string(variant);
        const fs::path path = ctx.ckpt_dir(seed) / (prefix + ".ckpt");
        if (!fs::exists(path)) continue;
        ++found;
        policy::PolicyCheckpoint ck = policy::load_policy(path.string());
        EvalResult r = evaluate(ck, ctx.cfg, eval_seed(seed), threads);
        report.add(ctx.cfg.policy.finetune_steps, seed, prefix + ".success", r.success_rate());
        report.add(ctx.cfg.policy.finetune_steps, seed, prefix + ".mean_steps", r.mean_steps);
        ctx.out_stream << "seed " << seed << " " << prefix << ": success " << fmt(r.success_rate())
                       << " over " << r.episodes << " episodes, mean steps " << fmt(r.mean_steps)
                       << "\n";
      }
    }
  }
  if (found == 0) throw PipelineOrderError("no fine-tuned policy checkpoints; run train-policy first");
  print_comparisons(ctx, report);
  emit(ctx, report, "eval");
  return kOk;
}

int cmd_ablate(Context& ctx) {
  RunReport report;
  for (uint64_t seed : ctx.cfg.run.seeds) report.append(run_ablation_seed(ctx.cfg, seed, ctx.log));
  print_comparisons(ctx, report);
  emit(ctx, report, "ablate");
  return kOk;
}

int cmd_report(Context& ctx, bool ablation) {
  RunReport report = run_pipeline(ctx.cfg, ablation, ctx.log, ctx.out / "checkpoints");
  print_comparisons(ctx, report);
  emit(ctx, report, "");
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Align-then-steer adaptation of generative action policies on a toy arm suite", "ate"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Invocation inv;
  app.add_option("--config", inv.config_path, "Config file of key = value lines")->check(CLI::ExistingFile);
  app.add_option("--set", inv.overrides, "Override one key, key=value (repeatable)");
  app.add_option("--out", inv.out_dir, "Output directory (default: $ATE_OUT_DIR or ./ate_out)");
  app.add_option("--seed", inv.seed, "Run a single seed instead of run.seeds")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", inv.threads, "Evaluation worker threads (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--preset", inv.preset, "Base config: default, micro or desk");
  app.add_flag("--quiet", inv.quiet, "Suppress progress messages");

  const std::map<std::string, std::string> subs{
      {"gen-data", "Generate the pretrain and adaptation corpora"},
      {"train-vae", "Train the pretrain VAE"},
      {"estimate-prior", "Stream the pretrain latent prior into the pretrain VAE checkpoint"},
      {"train-adapt-vae", "Train the adaptation VAE against the pretrain prior"},
      {"train-policy", "Pretrain and fine-tune policies (baseline and steered)"},
      {"eval", "Evaluate fine-tuned checkpoints on the target arm"},
      {"ablate", "Compare two-stage and single-stage adaptation VAEs"},
      {"report", "Run the whole pipeline and write report.csv and plots"},
  };
  for (const auto& [name, help] : subs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->callback([&inv, name = name] { inv.subcommand = name; });
    if (name == "report") sub->add_flag("--ablation", inv.ablation, "Include the single-stage ablation");
  }

  if (args.size() > 1 && !args[1].empty() && args[1][0] != '-' && subs.count(args[1]) == 0) {
    err << "ate: unknown subcommand '" << args[1] << "'\nrun 'ate --help' for usage\n";
    return kUsageError;
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "ate: " << e.what() << "\n" << "run 'ate --help' for usage\n";
    return kUsageError;
  }

  try {
    const char* env_out = std::getenv("ATE_OUT_DIR");
    Context ctx{resolve_config(inv),
                !inv.out_dir.empty() ? fs::path(inv.out_dir)
                                     : (env_out && *env_out ? fs::path(env_out) : fs::path("ate_out")),
                out, {}};
    if (!inv.quiet) ctx.log = [&err](const std::string& s) { err << "[ate] " << s << "\n"; };
    else ctx.log = [](const std::string&) {};
    fs::create_directories(ctx.out);
    {
      std::ofstream echo(ctx.out / "config.txt");
      echo << "# ate " << inv.subcommand << "\n" << ctx.cfg.to_text();
      if (!echo) throw std::runtime_error("cannot write " + (ctx.out / "config.txt").string());
    }
    const std::map<std::string, std::function<int()>> dispatch{
        {"gen-data", [&] { return cmd_gen_data(ctx); }},
        {"train-vae", [&] { return cmd_train_vae(ctx); }},
        {"estimate-prior", [&] { return cmd_estimate_prior(ctx); }},
        {"train-adapt-vae", [&] { return cmd_train_adapt_vae(ctx); }},
        {"train-policy", [&] { return cmd_train_policy(ctx); }},
        {"eval", [&] { return cmd_eval(ctx); }},
        {"ablate", [&] { return cmd_ablate(ctx); }},
        {"report", [&] { return cmd_report(ctx, inv.ablation); }},
    };
    return dispatch.at(inv.subcommand)();
  } catch (const ConfigError& e) {
    err << "ate: config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const PipelineOrderError& e) {
    err << "ate: " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    err << "ate: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace ate::cli
