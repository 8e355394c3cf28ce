#include "ate/pipeline/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "ate/errors.hpp"

namespace ate::pipeline {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += f(xs[i]);
  }
  return out;
}

struct Entry {
  std::function<void(RunConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ATE_INT(path)                                                                \
  Entry {                                                                            \
    [](RunConfig& c, const std::string& k, const std::string& v) {                   \
      c.path = parse_int(k, v);                                                      \
    },                                                                               \
        [](const RunConfig& c) { return std::to_string(c.path); }                    \
  }
#define ATE_DOUBLE(path)                                                             \
  Entry {                                                                            \
    [](RunConfig& c, const std::string& k, const std::string& v) {                   \
      c.path = parse_double(k, v);                                                   \
    },                                                                               \
        [](const RunConfig& c) { return fmt_double(c.path); }                        \
  }
#define ATE_BOOL(path)                                                               \
  Entry {                                                                            \
    [](RunConfig& c, const std::string& k, const std::string& v) {                   \
      c.path = parse_bool(k, v);                                                     \
    },                                                                               \
        [](const RunConfig& c) { return std::string(c.path ? "true" : "false"); }    \
  }

const std::map<std::string, Entry>& registry() {
  static const std::map<std::string, Entry> table = {
      {"corpus.pretrain_episodes", ATE_INT(corpus.pretrain_episodes)},
      {"corpus.adapt_episodes", ATE_INT(corpus.adapt_episodes)},
      {"corpus.chunk_len", ATE_INT(corpus.chunk_len)},
      {"corpus.stride", ATE_INT(corpus.stride)},

      {"vae.latent_dim", ATE_INT(vae.model.latent_dim)},
      {"vae.depth", ATE_INT(vae.model.depth)},
      {"vae.width", ATE_INT(vae.model.width)},
      {"vae.heads", ATE_INT(vae.model.heads)},
      {"vae.ffn_hidden", ATE_INT(vae.model.ffn_hidden)},
      {"vae.info_alpha", ATE_DOUBLE(vae.model.info_alpha)},
      {"vae.info_lambda", ATE_DOUBLE(vae.model.info_lambda)},
      {"vae.decoder_variance", ATE_DOUBLE(vae.model.decoder_variance)},
      {"vae.mmd_bandwidths",
       Entry{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.vae.model.mmd_bandwidths.clear();
               for (const auto& s : split(v, ',')) {
                 c.vae.model.mmd_bandwidths.push_back(parse_double(k, s));
               }
             },
             [](const RunConfig& c) { return join(c.vae.model.mmd_bandwidths, fmt_double); }}},
      {"vae.pretrain_steps", ATE_INT(vae.pretrain_steps)},
      {"vae.adapt_steps", ATE_INT(vae.adapt_steps)},
      {"vae.batch", ATE_INT(vae.batch)},
      {"vae.lr", ATE_DOUBLE(vae.lr)},
      {"vae.weight_decay", ATE_DOUBLE(vae.weight_decay)},
      {"vae.prior_diagonal", ATE_BOOL(vae.prior_diagonal)},
      {"vae.prior_floor", ATE_DOUBLE(vae.prior_floor)},

      {"policy.width", ATE_INT(policy.width)},
      {"policy.blocks", ATE_INT(policy.blocks)},
      {"policy.time_dim", ATE_INT(policy.time_dim)},
      {"policy.task_dim", ATE_INT(policy.task_dim)},
      {"policy.pretrain_steps", ATE_INT(policy.pretrain_steps)},
      {"policy.finetune_steps", ATE_INT(policy.finetune_steps)},
      {"policy.batch", ATE_INT(policy.batch)},
      {"policy.lr", ATE_DOUBLE(policy.lr)},
      {"policy.weight_decay", ATE_DOUBLE(policy.weight_decay)},

      {"diffusion.steps", ATE_INT(diffusion.steps)},
      {"diffusion.beta_start", ATE_DOUBLE(diffusion.beta_start)},
      {"diffusion.beta_end", ATE_DOUBLE(diffusion.beta_end)},
      {"diffusion.reverse_update",
       Entry{[](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "posterior_mean") {
                 c.diffusion.update = policy::ReverseUpdate::posterior_mean;
               } else if (v == "full_noise") {
                 c.diffusion.update = policy::ReverseUpdate::full_noise;
               } else {
                 throw ConfigError(k + ": expected posterior_mean or full_noise, got '" + v + "'");
               }
             },
             [](const RunConfig& c) {
               return std::string(c.diffusion.update == policy::ReverseUpdate::posterior_mean
                                      ? "posterior_mean"
                                      : "full_noise");
             }}},

      {"flow.tau_min", ATE_DOUBLE(flow.tau_min)},
      {"flow.integration_steps", ATE_INT(flow.integration_steps)},

      {"guidance.scale", ATE_DOUBLE(guidance.scale)},
      {"guidance.step_scaling",
       Entry{[](RunConfig& c, const std::string&, const std::string& v) {
               c.guidance.step_scaling = guidance::step_scaling_from_string(v);
             },
             [](const RunConfig& c) { return std::string(to_string(c.guidance.step_scaling)); }}},
      {"guidance.perturbation_std", ATE_DOUBLE(guidance.perturbation_std)},
      {"guidance.tau_min", ATE_DOUBLE(guidance.tau_min)},

      {"eval.episodes", ATE_INT(eval.episodes)},
      {"eval.execute_horizon", ATE_INT(eval.execute_horizon)},

      {"run.stage",
       Entry{[](RunConfig& c, const std::string& k, const std::string& v) {
               if (v == "all") c.run.stage = Stage::all;
               else if (v == "stage1") c.run.stage = Stage::stage1;
               else if (v == "stage2") c.run.stage = Stage::stage2;
               else throw ConfigError(k + ": expected all, stage1 or stage2, got '" + v + "'");
             },
             [](const RunConfig& c) { return std::string(to_string(c.run.stage)); }}},
      {"run.seeds",
       Entry{[](RunConfig& c, const std::string& k, const std::string& v) {
               c.run.seeds.clear();
               for (const auto& s : split(v, ',')) c.run.seeds.push_back(parse_u64(k, s));
               if (c.run.seeds.empty()) throw ConfigError(k + " needs at least one seed");
             },
             [](const RunConfig& c) {
               return join(c.run.seeds, [](uint64_t s) { return std::to_string(s); });
             }}},
      {"run.families",
       Entry{[](RunConfig& c, const std::string&, const std::string& v) {
               c.run.families.clear();
               for (const auto& s : split(v, ',')) {
                 c.run.families.push_back(policy::family_from_string(s));
               }
             },
             [](const RunConfig& c) {
               return join(c.run.families,
                           [](policy::Family f) { return std::string(policy::to_string(f)); });
             }}},
      {"run.variants",
       Entry{[](RunConfig& c, const std::string&, const std::string& v) {
               c.run.variants.clear();
               for (const auto& s : split(v, ',')) c.run.variants.push_back(variant_from_string(s));
             },
             [](const RunConfig& c) {
               return join(c.run.variants, [](Variant x) { return std::string(to_string(x)); });
             }}},
      {"run.checkpoint_every", ATE_INT(run.checkpoint_every)},
      {"run.threads", ATE_INT(run.threads)},
  };
  return table;
}

#undef ATE_INT
#undef ATE_DOUBLE
#undef ATE_BOOL

}  // namespace

const char* to_string(Variant v) { return v == Variant::baseline ? "baseline" : "ate"; }

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "ate") return Variant::ate;
  throw ConfigError("unknown variant '" + s + "' (expected baseline or ate)");
}

const char* to_string(Stage s) {
  switch (s) {
    case Stage::all: return "all";
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
  }
  return "all";
}

policy::NoiseSchedule DiffusionSettings::schedule() const {
  if (beta_start == 0.0 && beta_end == 0.0) return policy::NoiseSchedule::standard(steps);
  return policy::NoiseSchedule::linear(steps, beta_start, beta_end);
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(corpus.pretrain_episodes >= 1 && corpus.adapt_episodes >= 1,
       "corpus: episode counts must be at least 1");
  need(corpus.chunk_len >= 1 && corpus.stride >= 1, "corpus: chunk_len and stride must be >= 1");
  need(vae.pretrain_steps >= 0 && vae.adapt_steps >= 0, "vae: step counts must be >= 0");
  need(vae.batch >= 2, "vae.batch must be at least 2 (the MMD term needs pairs)");
  need(vae.lr > 0, "vae.lr must be positive");
  need(vae.prior_floor > 0, "vae.prior_floor must be positive");
  vae::VaeConfig vc = vae.model;
  vc.chunk_len = corpus.chunk_len;
  vc.validate();
  need(policy.pretrain_steps >= 0 && policy.finetune_steps >= 0,
       "policy: step counts must be >= 0");
  need(policy.batch >= 1 && policy.lr > 0, "policy: batch and lr must be positive");
  need(diffusion.steps >= 1, "diffusion.steps must be >= 1");
  diffusion.schedule();
  need(flow.tau_min > 0 && flow.tau_min < 1, "flow.tau_min must lie in (0, 1)");
  need(flow.integration_steps >= 1, "flow.integration_steps must be >= 1");
  guidance.validate();
  need(eval.episodes >= 1, "eval.episodes must be at least 1");
  need(eval.execute_horizon >= 1 && eval.execute_horizon <= corpus.chunk_len,
       "eval.execute_horizon must lie in [1, corpus.chunk_len]");
  need(!run.seeds.empty(), "run.seeds must not be empty");
  need(!run.families.empty() && !run.variants.empty(),
       "run.families and run.variants must not be empty");
  need(run.checkpoint_every >= 0 && run.threads >= 0,
       "run.checkpoint_every and run.threads must be >= 0");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = registry();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, entry] : registry()) out += key + " = " + entry.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, entry] : registry()) out.push_back(key);
  return out;
}

RunConfig parse_config(const std::string& text, const std::string& origin, const RunConfig& base) {
  RunConfig cfg = base;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      cfg.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream file(path);
  if (!file) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << file.rdbuf();
  return parse_config(ss.str(), path.string(), base);
}

RunConfig micro_config() {
  RunConfig c;
  c.corpus.pretrain_episodes = 3;
  c.corpus.adapt_episodes = 3;
  c.corpus.chunk_len = 8;
  c.corpus.stride = 4;
  c.vae.model.latent_dim = 4;
  c.vae.model.depth = 1;
  c.vae.model.width = 16;
  c.vae.model.heads = 2;
  c.vae.model.ffn_hidden = 32;
  c.vae.pretrain_steps = 30;
  c.vae.adapt_steps = 30;
  c.vae.batch = 16;
  c.vae.lr = 1e-3;
  c.policy.width = 32;
  c.policy.blocks = 1;
  c.policy.time_dim = 8;
  c.policy.task_dim = 4;
  c.policy.pretrain_steps = 40;
  c.policy.finetune_steps = 40;
  c.policy.batch = 16;
  c.policy.lr = 1e-3;
  c.diffusion.steps = 25;
  c.flow.integration_steps = 8;
  c.eval.episodes = 8;
  c.eval.execute_horizon = 4;
  c.run.seeds = {0, 1};
  c.run.checkpoint_every = 20;
  return c;
}

RunConfig desk_config() {
  RunConfig c;
  c.policy.width = 128;
  c.vae.model.width = 32;
  c.vae.model.ffn_hidden = 64;
  c.policy.batch = 32;
  return c;
}

int resolved_threads(const RunSettings& run) {
  if (run.threads > 0) return run.threads;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

}  // namespace ate::pipeline
