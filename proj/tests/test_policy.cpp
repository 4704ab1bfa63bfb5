#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kflab/errors.hpp"
#include "kflab/policy.hpp"
#include "kflab/regularize.hpp"
#include "kflab/rng.hpp"

using namespace kflab;
using policy::ArchConfig;
using policy::BatchSample;
using policy::ConditioningMode;
using policy::ModeKind;
using policy::PolicyInput;
using policy::PolicyNet;

namespace {

std::vector<double> random_vec(Rng& rng, int n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

std::vector<std::vector<double>> obs_buffer(Rng& rng, int ticks, int dim) {
  std::vector<std::vector<double>> out;
  for (int t = 0; t < ticks; ++t) out.push_back(random_vec(rng, dim));
  return out;
}

ArchConfig tiny_arch() {
  ArchConfig a;
  a.enc_width = 6;
  a.enc_depth = 2;
  a.width = 8;
  a.layers = 1;
  a.heads = 2;
  a.chunk_len = 2;
  a.action_dim = 3;
  a.diff_train_steps = 5;
  a.diff_sample_steps = 5;
  return a;
}

// minimal Adam driver over the ddpm (+aux) objective for synthetic batches
void fit_batch(PolicyNet& net, const std::vector<BatchSample>& batch, int steps, double lr,
               uint64_t seed) {
  std::vector<Mat> m, v;
  for (const auto& w : net.params().values) {
    m.emplace_back(w.rows, w.cols);
    v.emplace_back(w.rows, w.cols);
  }
  for (int s = 0; s < steps; ++s) {
    policy::DdpmGraph g;
    policy::build_ddpm_loss(net, batch, derive_seed(seed, s), true, g);
    g.tape.backward(g.loss);
    const double b1 = 0.9, b2 = 0.999;
    const double bc1 = 1 - std::pow(b1, s + 1), bc2 = 1 - std::pow(b2, s + 1);
    const double cur_lr = lr * (s < steps * 7 / 10 ? 1.0 : 0.2);
    for (size_t i = 0; i < net.params().count(); ++i) {
      Mat& w = net.params().values[i];
      const Mat& gr = g.tape.grad(g.nodes.param_leaf[i]);
      for (size_t k = 0; k < w.size(); ++k) {
        m[i].a[k] = b1 * m[i].a[k] + (1 - b1) * gr.a[k];
        v[i].a[k] = b2 * v[i].a[k] + (1 - b2) * gr.a[k] * gr.a[k];
        w.a[k] -= cur_lr * (m[i].a[k] / bc1) / (std::sqrt(v[i].a[k] / bc2) + 1e-8);
      }
    }
  }
}

}  // namespace

TEST_CASE("context assembly: history window, latency-masked keyframes, degenerate modes") {
  Rng rng(2);
  const int dim = 7;
  const auto buf = obs_buffer(rng, 60, dim);

  ConditioningMode naive;
  naive.kind = ModeKind::naive_history;
  naive.num_past = 4;
  naive.stride_ticks = 10;
  const auto in = policy::assemble_context(buf, naive, nullptr, 35, nullptr);
  REQUIRE(in.frames.size() == 4);
  CHECK(in.frames[0].tick_offset == 10);   // tick 25
  CHECK(in.frames[1].tick_offset == 20);   // tick 15
  CHECK(in.frames[2].tick_offset == 30);   // tick 5
  CHECK(in.frames[3].tick_offset == 35);   // clamped to 0
  CHECK(in.frames[3].pad);
  CHECK_FALSE(in.frames[2].pad);
  CHECK(in.frames[0].obs == buf[25]);
  CHECK(in.frames[3].obs == buf[0]);

  ConditioningMode bpp;
  bpp.kind = ModeKind::bpp;
  bpp.latency_train_ticks = 30;
  bpp.max_keyframes = 4;
  keyframe::KeyframeSet k;
  k.ticks = {12, 48};
  const auto bin = policy::assemble_context(buf, bpp, &k, 50, nullptr);
  REQUIRE(bin.frames.size() == 4);
  CHECK_FALSE(bin.frames[0].pad);
  CHECK(bin.frames[0].obs == buf[12]);  // 48 > 50 - 30, masked out
  CHECK(bin.frames[1].pad);
  CHECK(bin.frames[2].pad);
  CHECK(bin.frames[3].pad);

  const auto cur = policy::assemble_context(buf, ConditioningMode::current_obs(), nullptr, 9,
                                            nullptr);
  CHECK(cur.frames.empty());
  CHECK(cur.current_obs == buf[9]);

  CHECK_THROWS_AS(policy::assemble_context(buf, bpp, nullptr, 10, nullptr), UsageError);
  CHECK_THROWS_AS(
      policy::assemble_context(buf, ConditioningMode::oracle(), nullptr, 10, nullptr),
      UsageError);
}

TEST_CASE("context shape is constant across t and latency masking is monotone") {
  Rng rng(3);
  const auto buf = obs_buffer(rng, 80, 5);
  ConditioningMode bpp;
  bpp.kind = ModeKind::bpp;
  bpp.max_keyframes = 3;
  keyframe::KeyframeSet k;
  k.ticks = {0, 20, 40, 60};
  for (int t = 0; t < 80; t += 7) {
    const auto in = policy::assemble_context(buf, bpp, &k, t, nullptr);
    CHECK(in.frames.size() == 3);  // padding absorbs variation
    for (int lat = 0; lat < 70; lat += 10) {
      auto live = [&](int latency) {
        int n = 0;
        const auto x = policy::assemble_context(buf, bpp, &k, t, nullptr, latency);
        for (const auto& f : x.frames)
          if (!f.pad) ++n;
        return n;
      };
      CHECK(live(lat + 10) <= live(lat));  // larger latency never adds keyframes
    }
  }
}

TEST_CASE("keyframe order is slot-encoded: permuting frames changes the features") {
  Rng rng(4);
  const int dim = 6;
  ConditioningMode bpp;
  bpp.kind = ModeKind::bpp;
  bpp.max_keyframes = 2;
  auto arch = tiny_arch();
  PolicyNet net(arch, bpp, dim, 0, false, false, 2, 7);
  net.obs_norm = policy::Normalizer::identity(dim);
  net.act_norm = policy::Normalizer::identity(arch.action_dim);

  PolicyInput in;
  in.current_obs = random_vec(rng, dim);
  in.frames.push_back({30, random_vec(rng, dim), false});
  in.frames.push_back({10, random_vec(rng, dim), false});
  PolicyInput swapped = in;
  std::swap(swapped.frames[0], swapped.frames[1]);

  Mat zero(1, arch.chunk_len * arch.action_dim);
  nn::Tape t1, t2;
  const auto n1 = net.build_forward(t1, {in}, zero, {0}, false, 0);
  const auto n2 = net.build_forward(t2, {swapped}, zero, {0}, false, 0);
  bool differs = false;
  for (size_t i = 0; i < t1.val(n1.pooled).size(); ++i)
    if (t1.val(n1.pooled).a[i] != t2.val(n2.pooled).a[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("normalization round-trips within 1e-6") {
  Rng rng(5);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 50; ++i) rows.push_back(random_vec(rng, 12));
  std::vector<const std::vector<double>*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  const auto norm = policy::Normalizer::fit(ptrs, 12);
  for (const auto& r : rows) {
    const auto back = norm.denormalize(norm.normalize(r));
    for (size_t d = 0; d < r.size(); ++d) CHECK(std::abs(back[d] - r[d]) < 1e-6);
  }
  // constant dimensions keep scale one
  std::vector<std::vector<double>> const_rows(5, std::vector<double>(3, 0.7));
  std::vector<const std::vector<double>*> cp;
  for (const auto& r : const_rows) cp.push_back(&r);
  const auto cn = policy::Normalizer::fit(cp, 3);
  CHECK(cn.sd == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("cosine schedule: near-noiseless start, monotone corruption") {
  const auto s = policy::DiffusionSchedule::make("cosine", 50);
  REQUIRE(s.alpha_bar.size() == 50);
  CHECK(s.alpha_bar[0] > 0.99);  // step 0 barely corrupts
  for (size_t i = 1; i < s.alpha_bar.size(); ++i) CHECK(s.alpha_bar[i] < s.alpha_bar[i - 1]);
  CHECK(s.alpha_bar.back() < 0.05);
  for (double b : s.beta) {
    CHECK(b > 0);
    CHECK(b <= 0.999);
  }
}

TEST_CASE("ddpm loss: deterministic given the seed; untrained loss sits near 1") {
  Rng rng(6);
  const int dim = 10;
  auto arch = tiny_arch();
  arch.chunk_len = 10;  // 30 target dims
  PolicyNet net(arch, ConditioningMode::current_obs(), dim, 0, false, false, 2, 3);
  net.obs_norm = policy::Normalizer::identity(dim);
  net.act_norm = policy::Normalizer::identity(arch.action_dim);

  std::vector<BatchSample> batch;
  for (int i = 0; i < 32; ++i) {
    BatchSample s;
    s.input.current_obs = random_vec(rng, dim);
    for (int d = 0; d < arch.chunk_len * arch.action_dim; ++d)
      s.chunk_norm.push_back(rng.normal());
    batch.push_back(std::move(s));
  }
  const double l1 = policy::ddpm_loss(net, batch, 99);
  const double l2 = policy::ddpm_loss(net, batch, 99);
  CHECK(l1 == l2);
  // zero-initialized head predicts zero noise, so the loss is E[eps^2] = 1
  CHECK(l1 == doctest::Approx(1.0).epsilon(0.1));
  CHECK(policy::ddpm_loss(net, batch, 100) != l1);
}

TEST_CASE("corruption at the schedule start stays close to the clean chunk") {
  const auto s = policy::DiffusionSchedule::make("cosine", 50);
  Rng rng(7);
  double max_dev = 0;
  for (int d = 0; d < 200; ++d) {
    const double x0 = rng.normal();
    const double eps = rng.normal();
    const double xt = std::sqrt(s.alpha_bar[0]) * x0 + std::sqrt(1 - s.alpha_bar[0]) * eps;
    max_dev = std::max(max_dev, std::abs(xt - x0));
  }
  CHECK(max_dev < 0.2);
}

TEST_CASE("analytic gradients of the full objective match central finite differences") {
  Rng rng(8);
  const int dim = 9;
  ConditioningMode naive;
  naive.kind = ModeKind::naive_history;
  naive.num_past = 2;
  naive.stride_ticks = 3;
  const auto arch = tiny_arch();
  PolicyNet net(arch, naive, dim, 0, true, true, 4, 11);
  net.obs_norm = policy::Normalizer::identity(dim);
  net.act_norm = policy::Normalizer::identity(arch.action_dim);

  std::vector<BatchSample> batch;
  for (int i = 0; i < 2; ++i) {
    BatchSample s;
    s.input.current_obs = random_vec(rng, dim);
    s.input.frames.push_back({3, random_vec(rng, dim), false});
    s.input.frames.push_back({6, std::vector<double>{}, i == 1});  // one pad in sample 1
    if (i != 1) s.input.frames.back().obs = random_vec(rng, dim);
    s.past_actions.resize(2);
    s.past_actions[0] = {0.1, -0.2, 0.3};
    if (i != 1) s.past_actions[1] = {-0.4, 0.5, 0.0};
    for (int d = 0; d < arch.chunk_len * arch.action_dim; ++d)
      s.chunk_norm.push_back(0.3 * rng.normal());
    s.progress_class = i + 1;
    batch.push_back(std::move(s));
  }

  auto loss_value = [&]() {
    policy::DdpmGraph g;
    policy::build_ddpm_loss(net, batch, 1234, false, g);
    const int ptp = regularize::build_ptp_loss(net, g.tape, g.nodes, batch);
    const int gt = regularize::build_gt_loss(net, g.tape, g.nodes, batch);
    const int total = g.tape.add(g.loss, g.tape.add(g.tape.scale(ptp, 0.5), g.tape.scale(gt, 0.7)));
    return std::pair<double, policy::DdpmGraph*>(g.tape.scalar(total), nullptr);
  };

  // analytic pass
  policy::DdpmGraph g;
  policy::build_ddpm_loss(net, batch, 1234, false, g);
  const int ptp = regularize::build_ptp_loss(net, g.tape, g.nodes, batch);
  const int gt = regularize::build_gt_loss(net, g.tape, g.nodes, batch);
  const int total =
      g.tape.add(g.loss, g.tape.add(g.tape.scale(ptp, 0.5), g.tape.scale(gt, 0.7)));
  g.tape.backward(total);

  size_t checked = 0, ok = 0;
  for (size_t pi = 0; pi < net.params().count(); ++pi) {
    Mat& w = net.params().values[pi];
    const Mat& gr = g.tape.grad(g.nodes.param_leaf[pi]);
    for (size_t e = 0; e < w.size(); ++e) {
      const double h = 1e-5 * std::max(1.0, std::abs(w.a[e]));
      const double orig = w.a[e];
      w.a[e] = orig + h;
      const double lp = loss_value().first;
      w.a[e] = orig - h;
      const double lm = loss_value().first;
      w.a[e] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double rel =
          std::abs(gr.a[e] - fd) / std::max({std::abs(gr.a[e]), std::abs(fd), 1e-6});
      ++checked;
      if (rel <= 1e-4) ++ok;
    }
  }
  CHECK(checked > 1000);
  CHECK(static_cast<double>(ok) / checked >= 0.95);
}

TEST_CASE("sampling is deterministic per seed") {
  Rng rng(9);
  const int dim = 8;
  const auto arch = tiny_arch();
  PolicyNet net(arch, ConditioningMode::current_obs(), dim, 0, false, false, 2, 5);
  net.obs_norm = policy::Normalizer::identity(dim);
  net.act_norm = policy::Normalizer::identity(arch.action_dim);
  PolicyInput in;
  in.current_obs = random_vec(rng, dim);
  CHECK(policy::sample_chunk(net, in, 42) == policy::sample_chunk(net, in, 42));
  CHECK(policy::sample_chunk(net, in, 42) != policy::sample_chunk(net, in, 43));
}

TEST_CASE("a policy trained on one constant chunk reproduces it from any seed") {
  Rng rng(10);
  const int dim = 8;
  ArchConfig arch;
  arch.enc_width = 12;
  arch.enc_depth = 1;
  arch.width = 24;
  arch.layers = 1;
  arch.heads = 2;
  arch.chunk_len = 4;
  arch.action_dim = 3;
  PolicyNet net(arch, ConditioningMode::current_obs(), dim, 0, false, false, 2, 21);
  net.obs_norm = policy::Normalizer::identity(dim);
  net.act_norm = policy::Normalizer::identity(arch.action_dim);

  const auto obs = random_vec(rng, dim);
  std::vector<double> target = {0.3, -0.4, 0.5, 0.1, 0.0, -0.2, 0.25, -0.15, 0.35, 0.05, -0.3, 0.2};
  std::vector<BatchSample> batch(16);
  for (auto& s : batch) {
    s.input.current_obs = obs;
    s.chunk_norm = target;
  }
  fit_batch(net, batch, 2500, 2e-3, 77);

  PolicyInput in;
  in.current_obs = obs;
  int hits = 0;
  const int n = 100;
  for (int seed = 0; seed < n; ++seed) {
    const auto chunk = policy::sample_chunk(net, in, seed);
    double rms = 0;
    for (size_t d = 0; d < chunk.size(); ++d)
      rms += (chunk[d] - target[d]) * (chunk[d] - target[d]);
    rms = std::sqrt(rms / chunk.size());
    if (rms <= 0.05) ++hits;
  }
  CHECK(hits >= 99);
}

TEST_CASE("a policy trained on a symmetric bimodal chunk set samples near the two modes") {
  Rng rng(11);
  const int dim = 8;
  ArchConfig arch;
  arch.enc_width = 12;
  arch.enc_depth = 1;
  arch.width = 32;
  arch.layers = 1;
  arch.heads = 2;
  arch.chunk_len = 4;
  arch.action_dim = 3;
  PolicyNet net(arch, ConditioningMode::current_obs(), dim, 0, false, false, 2, 23);
  net.obs_norm = policy::Normalizer::identity(dim);
  net.act_norm = policy::Normalizer::identity(arch.action_dim);

  const auto obs = random_vec(rng, dim);
  std::vector<double> mode(12);
  for (int d = 0; d < 12; ++d) mode[d] = (d % 2 ? -1.0 : 1.0) * (0.6 + 0.05 * d);
  std::vector<BatchSample> batch(16);
  for (size_t i = 0; i < batch.size(); ++i) {
    batch[i].input.current_obs = obs;
    batch[i].chunk_norm = mode;
    if (i % 2) for (auto& v : batch[i].chunk_norm) v = -v;
  }
  fit_batch(net, batch, 8000, 2e-3, 55);

  PolicyInput in;
  in.current_obs = obs;
  int near_mode = 0, plus = 0, minus = 0;
  const int n = 200;
  for (int seed = 0; seed < n; ++seed) {
    const auto chunk = policy::sample_chunk(net, in, 1000 + seed);
    double rp = 0, rm = 0;
    for (size_t d = 0; d < chunk.size(); ++d) {
      rp += (chunk[d] - mode[d]) * (chunk[d] - mode[d]);
      rm += (chunk[d] + mode[d]) * (chunk[d] + mode[d]);
    }
    rp = std::sqrt(rp / chunk.size());
    rm = std::sqrt(rm / chunk.size());
    if (std::min(rp, rm) <= 0.1) {
      ++near_mode;
      (rp < rm ? plus : minus) += 1;
    }
  }
  CHECK(near_mode >= 190);  // >= 95% concentrate on a mode
  CHECK(plus > 20);         // both modes actually appear
  CHECK(minus > 20);
}

TEST_CASE("checkpoints round-trip bit-exactly and refuse foreign inputs") {
  Rng rng(12);
  const auto arch = tiny_arch();
  const auto spec = env::EnvSpec::defaults(env::TaskId::variable_password);
  PolicyNet net(arch, ConditioningMode::oracle(), spec.obs_dim(), spec.progress_classes(),
                false, false, spec.progress_classes(), 31);
  net.obs_norm = policy::Normalizer::identity(spec.obs_dim());
  net.act_norm = policy::Normalizer::identity(arch.action_dim);

  const auto ckpt = policy::make_checkpoint(net, spec, "digest123", 31);
  ckpt.save("/tmp/kflab_ckpt_test.json");
  const auto loaded = policy::Checkpoint::load("/tmp/kflab_ckpt_test.json");
  CHECK(loaded.digest() == ckpt.digest());
  const auto net2 = loaded.instantiate();
  for (size_t i = 0; i < net.params().count(); ++i)
    CHECK(net.params().values[i].a == net2.params().values[i].a);

  // wrong-shape input rejected
  PolicyInput bad;
  bad.current_obs = random_vec(rng, 3);
  Mat zero(1, arch.chunk_len * arch.action_dim);
  nn::Tape t;
  CHECK_THROWS_AS(net2.build_forward(t, {bad}, zero, {0}, false, 0), UsageError);
}
