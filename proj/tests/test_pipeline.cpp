#include <doctest.h>

#include <filesystem>
#include <regex>

#include "ate/errors.hpp"
#include "ate/pipeline/pipeline.hpp"

using namespace ate;
using namespace ate::pipeline;

namespace {

RunConfig tiny() {
  RunConfig c = micro_config();
  c.run.seeds = {3};
  c.run.threads = 2;
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ate_test_pipeline_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config files accept sections, comments and overrides") {
  const std::string text =
      "# budgets\n"
      "[vae]\n"
      "latent_dim = 8   # small\n"
      "pretrain_steps=12\n"
      "\n"
      "[policy]\n"
      "width = 64\n"
      "guidance.scale = 0.25\n";
  // A key with a dot after a section header still gets the section prefix.
  CHECK_THROWS_AS(parse_config(text), ConfigError);

  RunConfig c = parse_config("[vae]\nlatent_dim = 8\npretrain_steps=12\n[policy]\nwidth = 64\n"
                             "[]\nguidance.scale = 0.25\nrun.seeds = 1,2\n");
  CHECK(c.vae.model.latent_dim == 8);
  CHECK(c.vae.pretrain_steps == 12);
  CHECK(c.policy.width == 64);
  CHECK(c.guidance.scale == doctest::Approx(0.25));
  CHECK(c.run.seeds == std::vector<uint64_t>{1, 2});
  c.apply_override("vae.latent_dim=6");
  CHECK(c.vae.model.latent_dim == 6);
}

TEST_CASE("unknown keys and bad values name the offending line") {
  try {
    parse_config("vae.latent_dim = 8\nvae.nonsense = 1\n", "cfg.txt");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("cfg.txt:2") != std::string::npos);
    CHECK(msg.find("vae.nonsense") != std::string::npos);
  }
  RunConfig c;
  CHECK_THROWS_AS(c.set("policy.width", "wide"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(c.set("run.seeds", ""), ConfigError);
}

TEST_CASE("the resolved config text parses back to itself") {
  RunConfig c = micro_config();
  c.guidance.step_scaling = guidance::StepScaling::cosine;
  c.run.families = {policy::Family::flow};
  const std::string text = c.to_text();
  CHECK(parse_config(text).to_text() == text);
  CHECK(RunConfig::keys().size() > 30);
}

TEST_CASE("config validation rejects an execution horizon beyond the chunk") {
  RunConfig c = micro_config();
  c.eval.execute_horizon = c.corpus.chunk_len + 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mixture fit recovers two separated clusters") {
  Rng rng(11);
  Matrix pts(600, 2);
  for (int i = 0; i < 600; ++i) {
    const double cx = i < 300 ? -4.0 : 4.0;
    pts(i, 0) = cx + 0.5 * rng.normal();
    pts(i, 1) = 1.0 + 0.3 * rng.normal();
  }
  Mixture m = fit_mixture(pts, 2, 5);
  REQUIRE(m.components.size() == 2);
  CHECK(m.components[0].mean(0) == doctest::Approx(-4.0).epsilon(0.03));
  CHECK(m.components[1].mean(0) == doctest::Approx(4.0).epsilon(0.03));
  CHECK(m.components[0].weight == doctest::Approx(0.5).epsilon(0.02));
  ModeHistogram h = assign_modes(m, pts);
  CHECK(h.exactly_one_fraction() > 0.98);
  CHECK(h.dominant_fraction() == doctest::Approx(0.5).epsilon(0.05));

  Matrix far(1, 2);
  far << 0.0, 20.0;
  ModeHistogram hf = assign_modes(m, far);
  CHECK(hf.none == 1);
  CHECK(hf.exactly_one_fraction() == 0.0);
}

TEST_CASE("mahalanobis matches the closed form for a diagonal covariance") {
  MixtureComponent c{1.0, Eigen::RowVector2d(1.0, -1.0), Matrix::Zero(2, 2)};
  c.cov(0, 0) = 4.0;
  c.cov(1, 1) = 0.25;
  const double d = mahalanobis(Eigen::RowVector2d(3.0, 0.0), c);
  CHECK(d == doctest::Approx(std::sqrt(1.0 + 4.0)));
}

TEST_CASE("report csv round-trips and its bytes depend only on the rows") {
  RunReport r;
  r.add(10, 1, "flow.ate.success", 0.5);
  r.add(0, 1, "flow.ate.success", 0.1);
  r.add(5, 0, "vae.pretrain.loss", 1.0 / 3.0);
  r.wall_seconds["stage1"] = 12.5;
  RunReport shuffled;
  shuffled.add(5, 0, "vae.pretrain.loss", 1.0 / 3.0);
  shuffled.add(10, 1, "flow.ate.success", 0.5);
  shuffled.add(0, 1, "flow.ate.success", 0.1);
  shuffled.wall_seconds["stage1"] = 99.0;
  const std::string a = report_csv(r);
  CHECK(a == report_csv(shuffled));
  RunReport back = parse_report_csv(a);
  r.normalize();
  CHECK(back.rows == r.rows);
  CHECK(report_csv(back) == a);
  CHECK(r.final_value("flow.ate.success", 1) == 0.5);
  CHECK_THROWS_AS(r.final_value("flow.ate.success", 7), UsageError);
}

TEST_CASE("report rejects duplicate steps and malformed csv") {
  RunReport r;
  r.add(1, 0, "m", 1.0);
  r.add(1, 0, "m", 2.0);
  CHECK_THROWS_AS(r.normalize(), UsageError);
  CHECK_THROWS_AS(r.add(1, 0, "bad,name", 0.0), UsageError);
  CHECK_THROWS_AS(parse_report_csv("step,seed,value\n"), FormatError);
  CHECK_THROWS_AS(parse_report_csv("step,seed,metric,value\n1,0,m\n"), FormatError);
  CHECK_THROWS_AS(parse_report_csv("step,seed,metric,value\nx,0,m,1\n"), FormatError);
}

TEST_CASE("plot polylines stay inside the axes and labels span the data") {
  RunReport r;
  for (int s = 0; s <= 10; ++s) {
    r.add(s * 100, 0, "loss", 5.0 - 0.3 * s);
    r.add(s * 100, 1, "loss", 4.0 + 0.1 * s);
  }
  const std::string svg = metric_svg(r, "loss");
  CHECK(svg.find(">0<") != std::string::npos);
  CHECK(svg.find(">1000<") != std::string::npos);
  CHECK(svg.find(">5<") != std::string::npos);
  CHECK(svg.find(">2<") != std::string::npos);
  std::regex pts_re("points=\"([^\"]*)\"");
  int lines = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), pts_re); it != std::sregex_iterator(); ++it) {
    ++lines;
    std::stringstream ss((*it)[1].str());
    std::string pt;
    int n = 0;
    while (ss >> pt) {
      const auto comma = pt.find(',');
      const double x = std::stod(pt.substr(0, comma));
      const double y = std::stod(pt.substr(comma + 1));
      CHECK(x >= 70.0 - 1e-9);
      CHECK(x <= 620.0 + 1e-9);
      CHECK(y >= 30.0 - 1e-9);
      CHECK(y <= 350.0 + 1e-9);
      ++n;
    }
    CHECK(n == 11);
  }
  CHECK(lines == 2);
  CHECK_THROWS_AS(metric_svg(r, "absent"), UsageError);
}

TEST_CASE("emit_report writes csv, plots and timings") {
  RunReport r;
  r.add(0, 0, "flow.ate.success", 0.25);
  r.add(0, 0, "odd name/with slash", 1.0);
  r.wall_seconds["eval"] = 1.5;
  const auto dir = scratch_dir("emit");
  emit_report(r, dir);
  CHECK(std::filesystem::exists(dir / "report.csv"));
  CHECK(std::filesystem::exists(dir / "timing.csv"));
  CHECK(std::filesystem::exists(dir / "plots" / "flow.ate.success.svg"));
  CHECK(std::filesystem::exists(dir / "plots" / "odd_name_with_slash.svg"));
  CHECK(load_report_csv(dir / "report.csv").rows.size() == 2);
}

TEST_CASE("normalization stats survive checkpoint metadata") {
  corpus::NormStats n;
  n.mean = Eigen::RowVector3d(0.1, -0.2, 1.0 / 3.0);
  n.stddev = Eigen::RowVector3d(1.0, 2.0, 1e-6);
  corpus::NormStats back = norm_from_json(norm_to_json(n));
  CHECK(back.mean == n.mean);
  CHECK(back.stddev == n.stddev);
  CHECK_THROWS_AS(norm_from_json("{}"), FormatError);
}

TEST_CASE("chunk sets pair each chunk with the observation at its start") {
  RunConfig c = tiny();
  Corpora cs = generate_corpora(c, 3);
  CHECK(cs.pretrain.action_dim == 4);
  CHECK(cs.adapt.action_dim == 4);
  CHECK(cs.adapt.trajectories.size() == 2u * static_cast<std::size_t>(c.corpus.adapt_episodes));
  ChunkSet set = make_chunk_set(cs.adapt, c.corpus.chunk_len, c.corpus.stride);
  REQUIRE(set.size() > 0);
  CHECK(set.obs.rows() == static_cast<Eigen::Index>(set.size()));
  CHECK(set.obs.cols() == 10);
  auto raw = corpus::chunk_corpus(cs.adapt, c.corpus.chunk_len, c.corpus.stride);
  for (std::size_t i = 0; i < raw.size(); i += 7) {
    const auto& traj = cs.adapt.trajectories[static_cast<std::size_t>(raw[i].trajectory)];
    CHECK(set.obs.row(static_cast<Eigen::Index>(i)) == traj.states.row(raw[i].start));
    CHECK((set.norm.invert(set.chunks[i]) - raw[i].values).cwiseAbs().maxCoeff() < 1e-12);
  }
  Matrix flat = set.flat();
  CHECK(flat.cols() == c.corpus.chunk_len * 4);
  CHECK(flat(1, 5) == set.chunks[1](1, 1));
}

TEST_CASE("stage order is enforced") {
  RunConfig c = tiny();
  SeedArtifacts d = prepare_data(c, 3);
  vae::VaeCheckpoint pre = train_pretrain_vae(c, d.pre_data, 3);
  CHECK_THROWS_AS(train_adapt_vae(c, d.adapt_data, &pre, 3), PipelineOrderError);
  CHECK_THROWS_AS(train_adapt_vae(c, d.adapt_data, nullptr, 3), PipelineOrderError);
  attach_prior(c, pre, d.pre_data, 3);
  REQUIRE(pre.prior.has_value());
  vae::VaeCheckpoint adapt = train_adapt_vae(c, d.adapt_data, &pre, 3);
  CHECK_THROWS_AS(attach_prior(c, adapt, d.adapt_data, 3), PipelineOrderError);

  policy::PolicyCheckpoint pol = pretrain_policy(c, policy::Family::diffusion, d.pre_data, 3);
  CHECK_THROWS_AS(run_stage2(c, pol, d.adapt_data, nullptr, Variant::ate, 3), PipelineOrderError);
  CHECK_THROWS_AS(run_stage2(c, pol, d.adapt_data, &pre, Variant::ate, 3), PipelineOrderError);
  vae::VaeCheckpoint stripped = adapt;
  stripped.prior.reset();
  CHECK_THROWS_AS(run_stage2(c, pol, d.adapt_data, &stripped, Variant::baseline, 3),
                  PipelineOrderError);
  CHECK_NOTHROW(run_stage2(c, pol, d.adapt_data, &adapt, Variant::baseline, 3));

  RunConfig s2 = c;
  s2.run.stage = Stage::stage2;
  CHECK_THROWS_AS(run_seed(s2, 3, {}, scratch_dir("gate")), PipelineOrderError);
}

TEST_CASE("stage 1 reruns give identical prior statistics") {
  RunConfig c = tiny();
  SeedArtifacts d = prepare_data(c, 4);
  Stage1Result a = run_stage1(c, d.pre_data, d.adapt_data, 4);
  c.run.threads = 1;
  Stage1Result b = run_stage1(c, d.pre_data, d.adapt_data, 4);
  REQUIRE(a.pretrain.prior.has_value());
  CHECK(a.pretrain.prior->mean == b.pretrain.prior->mean);
  CHECK(a.pretrain.prior->cov == b.pretrain.prior->cov);
  CHECK(a.adapt.params.checksum() == b.adapt.params.checksum());
  CHECK(a.modes.total == static_cast<long>(d.adapt_data.size()));
  CHECK(a.modes.per_component == b.modes.per_component);
}

TEST_CASE("single-stage and two-stage adaptation differ only in the prior target") {
  RunConfig c = tiny();
  SeedArtifacts d = prepare_data(c, 5);
  vae::VaeCheckpoint pre = train_pretrain_vae(c, d.pre_data, 5);
  attach_prior(c, pre, d.pre_data, 5);
  vae::VaeCheckpoint two = train_adapt_vae(c, d.adapt_data, &pre, 5);
  vae::VaeCheckpoint one = train_adapt_vae(c, d.adapt_data, nullptr, 5, PriorTarget::standard_normal);
  CHECK(two.config.latent_dim == one.config.latent_dim);
  CHECK(two.config.width == one.config.width);
  CHECK(two.config.info_lambda == one.config.info_lambda);
  CHECK(one.prior->mean.isZero());
  CHECK(one.prior->cov.isIdentity());
  CHECK(two.prior->mean == pre.prior->mean);
  CHECK(one.metadata.find("standard_normal") != std::string::npos);
  CHECK(two.metadata.find("pretrain_latents") != std::string::npos);
  CHECK(one.params.checksum() != two.params.checksum());
}

TEST_CASE("zero guidance scale reproduces the baseline fine-tuning exactly") {
  RunConfig c = tiny();
  c.guidance.scale = 0.0;
  c.guidance.perturbation_std = 0.3;
  c.policy.finetune_steps = 100;
  SeedArtifacts d = prepare_data(c, 6);
  Stage1Result s1 = run_stage1(c, d.pre_data, d.adapt_data, 6);
  for (auto family : {policy::Family::diffusion, policy::Family::flow}) {
    CAPTURE(policy::to_string(family));
    policy::PolicyCheckpoint pre = pretrain_policy(c, family, d.pre_data, 6);
    FinetuneTrace tb, ta;
    auto base = run_stage2(c, pre, d.adapt_data, &s1.adapt, Variant::baseline, 6, nullptr, {}, &tb);
    auto ate = run_stage2(c, pre, d.adapt_data, &s1.adapt, Variant::ate, 6, nullptr, {}, &ta);
    REQUIRE(tb.losses.size() == 100);
    CHECK(tb.losses == ta.losses);
    CHECK(base.params.checksum() == ate.params.checksum());
  }
}

TEST_CASE("guidance changes the fine-tuning trajectory when the scale is positive") {
  RunConfig c = tiny();
  c.guidance.scale = 0.5;
  SeedArtifacts d = prepare_data(c, 6);
  Stage1Result s1 = run_stage1(c, d.pre_data, d.adapt_data, 6);
  policy::PolicyCheckpoint pre = pretrain_policy(c, policy::Family::flow, d.pre_data, 6);
  FinetuneTrace tb, ta;
  run_stage2(c, pre, d.adapt_data, &s1.adapt, Variant::baseline, 6, nullptr, {}, &tb);
  run_stage2(c, pre, d.adapt_data, &s1.adapt, Variant::ate, 6, nullptr, {}, &ta);
  CHECK(tb.losses.front() != ta.losses.front());
}

TEST_CASE("checkpoints are emitted at the configured steps and reload to valid samplers") {
  RunConfig c = tiny();
  c.run.checkpoint_every = 15;
  c.policy.finetune_steps = 40;
  SeedArtifacts d = prepare_data(c, 7);
  Stage1Result s1 = run_stage1(c, d.pre_data, d.adapt_data, 7);
  const auto dir = scratch_dir("ckpt");
  for (auto family : {policy::Family::diffusion, policy::Family::flow}) {
    policy::PolicyCheckpoint pre = pretrain_policy(c, family, d.pre_data, 7);
    std::vector<long> steps;
    RunReport report;
    auto fin = run_stage2(c, pre, d.adapt_data, &s1.adapt, Variant::ate, 7, &report,
                          [&](long s, const policy::PolicyCheckpoint&) { steps.push_back(s); });
    CHECK(steps == std::vector<long>{15, 30, 40});
    CHECK(!report.series(std::string(policy::to_string(family)) + ".ate.loss", 7).empty());
    CHECK(!report.series(std::string(policy::to_string(family)) + ".ate.latent_distance", 7).empty());

    const auto path = (dir / "policy.ckpt").string();
    policy::save_policy(path, fin);
    policy::PolicyCheckpoint back = policy::load_policy(path);
    CHECK(back.params.checksum() == fin.params.checksum());
    ChunkPolicy sampler = model_policy(back, c);
    Matrix obs = d.adapt_data.obs.topRows(3);
    std::vector<env::EnvState> states(3);
    auto chunks = sampler(obs, {0, 1, 0}, states, 99);
    REQUIRE(chunks.size() == 3);
    for (const auto& ch : chunks) {
      CHECK(ch.rows() == c.corpus.chunk_len);
      CHECK(ch.cols() == 4);
      CHECK(ch.allFinite());
    }
    auto again = model_policy(back, c)(obs, {0, 1, 0}, states, 99);
    CHECK(again[2] == chunks[2]);
  }
}

TEST_CASE("evaluation rejects zero episodes and a horizon beyond the chunk") {
  EvalProtocol p;
  p.episodes = 0;
  CHECK_THROWS_AS(evaluate_policy(random_policy(p.arm, 16, 4), p, 0), UsageError);
  p.episodes = 4;
  p.execute_horizon = 17;
  CHECK_THROWS_AS(evaluate_policy(random_policy(p.arm, 16, 4), p, 0), ConfigError);
}

TEST_CASE("evaluation is reproducible and independent of the thread count") {
  EvalProtocol p;
  p.episodes = 60;
  p.threads = 1;
  const EvalResult a = evaluate_policy(expert_policy(p.arm, 16, 4), p, 21);
  p.threads = 4;
  const EvalResult b = evaluate_policy(expert_policy(p.arm, 16, 4), p, 21);
  CHECK(a.successes == b.successes);
  CHECK(a.mean_steps == b.mean_steps);
  CHECK(a.decisions == b.decisions);
  const EvalResult r1 = evaluate_policy(random_policy(p.arm, 16, 4), p, 21);
  p.threads = 1;
  const EvalResult r2 = evaluate_policy(random_policy(p.arm, 16, 4), p, 21);
  CHECK(r1.successes == r2.successes);
  CHECK(r1.mean_steps == r2.mean_steps);
}

TEST_CASE("a random policy succeeds less often than the scripted expert") {
  EvalProtocol p;
  p.episodes = 100;
  p.threads = 4;
  const EvalResult expert = evaluate_policy(expert_policy(p.arm, 16, 4), p, 5);
  const EvalResult random = evaluate_policy(random_policy(p.arm, 16, 4), p, 5);
  MESSAGE("expert " << expert.success_rate() << " random " << random.success_rate());
  CHECK(expert.success_rate() > 0.8);
  CHECK(random.success_rate() < expert.success_rate());
  CHECK(random.success_rate() >= 0.0);
  CHECK(expert.success_rate() <= 1.0);
}

TEST_CASE("executed actions per decision equal the execution horizon") {
  EvalProtocol p;
  p.episodes = 2;
  p.execute_horizon = 5;
  int calls = 0;
  ChunkPolicy still = [&](const Matrix& obs, const std::vector<int>&,
                          const std::vector<env::EnvState>&, uint64_t) {
    ++calls;
    return std::vector<Matrix>(static_cast<std::size_t>(obs.rows()), Matrix::Zero(16, 4));
  };
  const EvalResult r = evaluate_policy(still, p, 1);
  // A motionless arm never succeeds (goals lie outside the start pose), so the
  // push episode sets the decision count.
  CHECK(r.successes == 0);
  CHECK(r.decisions == (env::push_task().max_steps + 4) / 5);
  CHECK(r.mean_steps == doctest::Approx((env::reach_task().max_steps + env::push_task().max_steps) / 2.0));
  CHECK(calls == r.decisions);
}

TEST_CASE("a full micro run reports every configured metric") {
  RunConfig c = tiny();
  const auto dir = scratch_dir("full");
  std::vector<std::string> lines;
  RunReport r = run_pipeline(c, true, [&](const std::string& s) { lines.push_back(s); }, dir);
  CHECK(!lines.empty());
  for (const char* m : {"diffusion.baseline.success", "diffusion.ate.success", "flow.baseline.success",
                        "flow.ate.success", "diffusion.ablation.two_stage.success",
                        "diffusion.ablation.single_stage.success", "vae.modes.exactly_one",
                        "vae.pretrain.loss", "vae.adapt.loss", "flow.ate.latent_distance"}) {
    CAPTURE(m);
    auto s = r.series(m, 3);
    REQUIRE(!s.empty());
    for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i].step > s[i - 1].step);
  }
  for (const auto& row : r.rows) {
    if (row.metric.size() > 8 && row.metric.substr(row.metric.size() - 8) == ".success") {
      CHECK(row.value >= 0.0);
      CHECK(row.value <= 1.0);
    }
  }
  CHECK(r.final_value("flow.ablation.two_stage.success", 3) == r.final_value("flow.ate.success", 3));
  auto ate = r.series("diffusion.ate.success", 3);
  CHECK(ate.front().step == 0);
  CHECK(ate.back().step == c.policy.finetune_steps);
  CHECK(std::filesystem::exists(dir / "seed3" / "vae_adapt.ckpt"));
  CHECK(std::filesystem::exists(dir / "seed3" / "flow.ate.ckpt"));

  // Stage 2 alone picks up the stage 1 checkpoints written above.
  RunConfig s2 = c;
  s2.run.stage = Stage::stage2;
  RunReport r2 = run_pipeline(s2, false, {}, dir);
  CHECK(r2.final_value("flow.ate.success", 3) == r.final_value("flow.ate.success", 3));

  PairedComparison cmp = compare_paired(r, "flow.ate.success", "flow.baseline.success");
  CHECK(cmp.seeds == 1);
}
