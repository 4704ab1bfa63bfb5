#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kflab/errors.hpp"
#include "kflab/harness.hpp"

using namespace kflab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

harness::ExperimentConfig tiny_config(const std::string& dir) {
  harness::ExperimentConfig c;
  c.task = "fixed_password";
  c.method = "current_obs";
  c.n_demos = 6;
  c.seeds = {1};
  c.eval_episodes = 2;
  c.train_steps = 25;
  c.batch_size = 8;
  c.width = 16;
  c.enc_width = 12;
  c.enc_depth = 1;
  c.layers = 1;
  c.heads = 2;
  c.chunk_len = 4;
  c.exec_len = 4;
  c.diff_sample_steps = 10;
  c.output_dir = dir;
  return c;
}

struct NoopAgent : rollout::Agent {
  env::Action act(const env::Env& e) override { return {e.spec().home_pose, 0.0}; }
};

}  // namespace

TEST_CASE("experiment config: file round trip and validation guards") {
  const std::string dir = "/tmp/kflab_harness_cfg";
  fs::create_directories(dir);
  auto cfg = tiny_config(dir + "/x");
  {
    std::ofstream f(dir + "/cfg.json");
    f << cfg.to_json().dump(2);
  }
  const auto loaded = harness::ExperimentConfig::from_file(dir + "/cfg.json");
  CHECK(loaded.digest() == cfg.digest());

  auto bad = cfg;
  bad.method = "bpp";  // no detector block
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("detector"), ConfigError);

  auto bad2 = cfg;
  bad2.seeds.clear();
  CHECK_THROWS_AS(bad2.validate(), ConfigError);

  auto bad3 = cfg;
  bad3.exec_len = 99;
  CHECK_THROWS_AS(bad3.validate(), ConfigError);

  auto bad4 = cfg;
  bad4.method = "nope";
  CHECK_THROWS_AS(bad4.validate(), ConfigError);
}

TEST_CASE("evaluate: no-op policy scores zero; expert anchor scores high; determinism") {
  const auto spec = env::EnvSpec::defaults(env::TaskId::fixed_password);
  auto noop_factory = [](uint64_t) -> std::unique_ptr<rollout::Agent> {
    return std::make_unique<NoopAgent>();
  };
  const auto noop = harness::evaluate_agents(spec, noop_factory, 2, {1, 2});
  CHECK(noop.mean == 0.0);
  CHECK(noop.episode_count == 4);

  const auto style = expert::default_style_mix(spec.task_id)[0].style;
  auto expert_factory = [&](uint64_t env_seed) -> std::unique_ptr<rollout::Agent> {
    return std::make_unique<rollout::ExpertAgent>(spec, style, env_seed);
  };
  const auto ex1 = harness::evaluate_agents(spec, expert_factory, 10, {1, 2});
  CHECK(ex1.mean >= 0.95);
  const auto ex2 = harness::evaluate_agents(spec, expert_factory, 10, {1, 2});
  CHECK(ex1.mean == ex2.mean);
  CHECK(ex1.per_seed == ex2.per_seed);
  CHECK(ex1.se == ex2.se);
}

TEST_CASE("run_experiment: pipeline smoke, manifest short-circuit, determinism") {
  const std::string dir1 = "/tmp/kflab_exp_smoke/a";
  const std::string dir2 = "/tmp/kflab_exp_smoke/b";
  fs::remove_all("/tmp/kflab_exp_smoke");

  auto cfg = tiny_config(dir1);
  const std::string out = harness::run_experiment(cfg);
  CHECK(out == dir1);
  CHECK(fs::exists(fs::path(dir1) / "manifest.json"));
  CHECK(fs::exists(fs::path(dir1) / "dataset.jsonl"));
  CHECK(fs::exists(fs::path(dir1) / "ckpt_seed1.json"));
  CHECK(fs::exists(fs::path(dir1) / "curve_seed1.csv"));
  CHECK(fs::exists(fs::path(dir1) / "eval.csv"));
  CHECK(fs::exists(fs::path(dir1) / "probe.csv"));

  // resume: checkpoint untouched, results identical
  const auto ckpt_time = fs::last_write_time(fs::path(dir1) / "ckpt_seed1.json");
  const std::string eval_before = slurp(fs::path(dir1) / "eval.csv");
  harness::run_experiment(cfg);
  CHECK(fs::last_write_time(fs::path(dir1) / "ckpt_seed1.json") == ckpt_time);
  CHECK(slurp(fs::path(dir1) / "eval.csv") == eval_before);

  // full-pipeline determinism across directories
  auto cfg2 = cfg;
  cfg2.output_dir = dir2;
  harness::run_experiment(cfg2);
  CHECK(slurp(fs::path(dir2) / "eval.csv") == eval_before);
  CHECK(slurp(fs::path(dir2) / "probe.csv") == slurp(fs::path(dir1) / "probe.csv"));

  // a different config in the same directory is refused
  auto cfg3 = cfg;
  cfg3.train_steps += 1;
  CHECK_THROWS_AS(harness::run_experiment(cfg3), IntegrityError);
}

TEST_CASE("report aggregates cells and rejects empty roots") {
  const std::string root = "/tmp/kflab_report_root";
  fs::remove_all(root);
  fs::create_directories(root);
  CHECK_THROWS_WITH_AS(harness::report(root), doctest::Contains("no experiments"), Error);

  auto cfg_a = tiny_config(root + "/m_current");
  harness::run_experiment(cfg_a);
  auto cfg_b = tiny_config(root + "/m_oracle");
  cfg_b.method = "oracle";
  cfg_b.chunk_len = 2;
  cfg_b.exec_len = 2;
  harness::run_experiment(cfg_b);

  const std::string text = harness::report(root);
  CHECK(text.find("current_obs") != std::string::npos);
  CHECK(text.find("oracle") != std::string::npos);
  CHECK(fs::exists(fs::path(root) / "summary.csv"));
  CHECK(fs::exists(fs::path(root) / "chunk.csv"));
  CHECK(fs::exists(fs::path(root) / "data_size.csv"));
  CHECK(fs::exists(fs::path(root) / "detector_noise.csv"));
  CHECK(fs::exists(fs::path(root) / "probe_summary.csv"));

  const std::string summary = slurp(fs::path(root) / "summary.csv");
  CHECK(summary.find("current_obs") != std::string::npos);
  CHECK(summary.find("oracle") != std::string::npos);
  const std::string chunk = slurp(fs::path(root) / "chunk.csv");
  CHECK(chunk.find(",2,") != std::string::npos);  // the chunk-2 cell is keyed by chunk_len
  CHECK(chunk.find(",4,") != std::string::npos);
}

TEST_CASE("bpp pipeline smoke with the oracle detector") {
  const std::string dir = "/tmp/kflab_exp_bpp";
  fs::remove_all(dir);
  auto cfg = tiny_config(dir);
  cfg.method = "bpp";
  cfg.has_detector = true;
  cfg.detector.kind = keyframe::DetectorKind::oracle;
  cfg.max_keyframes = 7;
  const std::string out = harness::run_experiment(cfg);
  CHECK(fs::exists(fs::path(out) / "annotations.json"));
  CHECK(fs::exists(fs::path(out) / "eval.csv"));
  const std::string csv = slurp(fs::path(out) / "eval.csv");
  CHECK(csv.find("bpp") != std::string::npos);
  CHECK(csv.find("oracle") != std::string::npos);
}
