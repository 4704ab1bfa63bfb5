#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kflab/errors.hpp"
#include "kflab/harness.hpp"
#include "kflab/probe.hpp"
#include "kflab/train.hpp"

using namespace kflab;
using policy::ConditioningMode;
using policy::PolicyInput;

namespace {

std::vector<double> random_vec(Rng& rng, int n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

policy::Checkpoint untrained_checkpoint(const env::EnvSpec& spec, ConditioningMode mode,
                                        uint64_t seed) {
  policy::ArchConfig arch;
  arch.enc_width = 12;
  arch.enc_depth = 1;
  arch.width = 16;
  arch.layers = 1;
  arch.heads = 2;
  arch.chunk_len = 4;
  policy::PolicyNet net(arch, mode, spec.obs_dim(), spec.progress_classes(), false, false,
                        spec.progress_classes(), seed);
  net.obs_norm = policy::Normalizer::identity(spec.obs_dim());
  net.act_norm = policy::Normalizer::identity(arch.action_dim);
  return policy::make_checkpoint(net, spec, "test", seed);
}

}  // namespace

TEST_CASE("identical inputs give identical feature rows of trunk width") {
  Rng rng(1);
  const auto spec = env::EnvSpec::defaults(env::TaskId::variable_password);
  const auto ckpt = untrained_checkpoint(spec, ConditioningMode::current_obs(), 3);
  PolicyInput in;
  in.current_obs = random_vec(rng, spec.obs_dim());
  const Mat f = probe::extract_features(ckpt, {in, in});
  CHECK(f.rows == 2);
  CHECK(f.cols == ckpt.arch.width);
  for (int c = 0; c < f.cols; ++c) CHECK(f.at(0, c) == f.at(1, c));
}

TEST_CASE("a zeroed trunk yields a constant feature map") {
  Rng rng(2);
  const auto spec = env::EnvSpec::defaults(env::TaskId::variable_password);
  auto ckpt = untrained_checkpoint(spec, ConditioningMode::current_obs(), 4);
  for (auto& m : ckpt.params.values) m.zero();
  PolicyInput a, b;
  a.current_obs = random_vec(rng, spec.obs_dim());
  b.current_obs = random_vec(rng, spec.obs_dim());
  const Mat f = probe::extract_features(ckpt, {a, b});
  for (int c = 0; c < f.cols; ++c) CHECK(f.at(0, c) == f.at(1, c));
}

TEST_CASE("probe fitting: separable data, determinism, degenerate guards") {
  Rng rng(3);
  Mat feats(40, 4);
  std::vector<int> labels(40);
  for (int i = 0; i < 40; ++i) {
    labels[i] = i % 2;
    for (int c = 0; c < 4; ++c) feats.at(i, c) = rng.normal() * 0.2 + (labels[i] ? 2.0 : -2.0);
  }
  const auto p1 = probe::fit_probe(feats, labels, 9);
  CHECK(probe::probe_accuracy(p1, feats, labels) == doctest::Approx(1.0));
  const auto p2 = probe::fit_probe(feats, labels, 9);
  CHECK(p1.w.a == p2.w.a);
  CHECK(p1.b == p2.b);

  std::vector<int> ones(40, 1);
  CHECK_THROWS_AS(probe::fit_probe(feats, ones, 1), UsageError);
}

TEST_CASE("label shuffling drives held-out accuracy to the chance band") {
  Rng rng(4);
  const int n = 400, f = 8, classes = 4;
  Mat feats(n, f);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % classes;
    for (int c = 0; c < f; ++c) feats.at(i, c) = rng.normal();
  }
  rng.shuffle(labels);  // destroy any signal

  // split: first 300 fit, last 100 eval
  Mat fit_f(300, f), ev_f(100, f);
  std::vector<int> fit_l(labels.begin(), labels.begin() + 300);
  std::vector<int> ev_l(labels.begin() + 300, labels.end());
  for (int i = 0; i < 300; ++i)
    std::copy(feats.row(i), feats.row(i) + f, fit_f.row(i));
  for (int i = 0; i < 100; ++i)
    std::copy(feats.row(300 + i), feats.row(300 + i) + f, ev_f.row(i));

  const auto p = probe::fit_probe(fit_f, fit_l, 5);
  const double acc = probe::probe_accuracy(p, ev_f, ev_l);
  const double chance = 1.0 / classes;
  const double sigma = std::sqrt(chance * (1 - chance) / 100);
  CHECK(std::abs(acc - chance) <= 3 * sigma + 1e-9);
}

TEST_CASE("probe_report: trained oracle checkpoints expose the label; checkpoint stays untouched") {
  const auto spec = env::EnvSpec::defaults(env::TaskId::fixed_password);
  const auto ds = expert::generate_dataset(spec, 10, expert::default_style_mix(spec.task_id), 41);

  policy::ArchConfig arch;
  arch.enc_width = 12;
  arch.enc_depth = 1;
  arch.width = 16;
  arch.layers = 1;
  arch.heads = 2;
  arch.chunk_len = 4;
  train::TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch_size = 16;
  cfg.seed = 6;
  const auto result = train::train(ds, nullptr, ConditioningMode::oracle(), arch,
                                   regularize::AuxConfig{}, cfg);
  const auto& ckpt = result.checkpoint;
  const std::string digest_before = ckpt.digest();

  std::vector<rollout::RolloutResult> rollouts;
  harness::evaluate(ckpt, nullptr, ckpt.arch.chunk_len, 4, {1}, &rollouts);
  REQUIRE(rollouts.size() == 4);

  const auto rep = probe::probe_report(ckpt, ds, nullptr, result.train_traj_idx,
                                       result.val_traj_idx, rollouts, nullptr, 11);
  CHECK(rep.iid_accuracy >= 0.95);  // the label is literally an input token
  CHECK(ckpt.digest() == digest_before);
  CHECK(rep.task == "fixed_password");
  int iid_total = 0;
  for (int c : rep.class_counts_iid) iid_total += c;
  CHECK(iid_total > 0);

  CHECK_THROWS_AS(probe::probe_report(ckpt, ds, nullptr, result.train_traj_idx,
                                      result.val_traj_idx, {}, nullptr, 11),
                  UsageError);
}

TEST_CASE("probe_report determinism") {
  const auto spec = env::EnvSpec::defaults(env::TaskId::variable_password);
  const auto ds = expert::generate_dataset(spec, 6, expert::default_style_mix(spec.task_id), 43);
  const auto ckpt = untrained_checkpoint(spec, ConditioningMode::current_obs(), 8);
  std::vector<rollout::RolloutResult> rollouts;
  harness::evaluate(ckpt, nullptr, ckpt.arch.chunk_len, 3, {2}, &rollouts);
  std::vector<size_t> fit_idx = {0, 1, 2, 3}, val_idx = {4, 5};
  const auto r1 = probe::probe_report(ckpt, ds, nullptr, fit_idx, val_idx, rollouts, nullptr, 7);
  const auto r2 = probe::probe_report(ckpt, ds, nullptr, fit_idx, val_idx, rollouts, nullptr, 7);
  CHECK(r1.iid_accuracy == r2.iid_accuracy);
  CHECK(r1.rollout_accuracy == r2.rollout_accuracy);
}
