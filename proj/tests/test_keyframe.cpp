#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "kflab/errors.hpp"
#include "kflab/expert.hpp"
#include "kflab/keyframe.hpp"

using namespace kflab;
using keyframe::DetectionSequence;
using keyframe::DetectorConfig;
using keyframe::DetectorKind;
using keyframe::KeyframeSet;

namespace {

DetectionSequence seq_of(const std::vector<int>& ticks, const std::vector<int>& verdicts) {
  DetectionSequence s;
  for (size_t i = 0; i < ticks.size(); ++i) s.verdicts.push_back({ticks[i], verdicts[i] != 0});
  return s;
}

// independent oracle: one edge per maximal true-run
std::vector<int> run_starts(const std::vector<int>& bits) {
  std::vector<int> out;
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i] && (i == 0 || !bits[i - 1])) out.push_back(static_cast<int>(i));
  return out;
}

int count_runs(const std::vector<int>& bits) { return static_cast<int>(run_starts(bits).size()); }

}  // namespace

TEST_CASE("rising edges: worked examples") {
  CHECK(keyframe::rising_edges(seq_of({0, 10, 20, 30, 40, 50}, {0, 1, 1, 0, 1, 1})).ticks ==
        std::vector<int>{10, 40});
  CHECK(keyframe::rising_edges(seq_of({0, 10, 20}, {0, 0, 0})).ticks.empty());
  CHECK(keyframe::rising_edges(seq_of({0, 10, 20}, {1, 0, 1})).ticks ==
        std::vector<int>{0, 20});
}

TEST_CASE("rising edges: exhaustive agreement with the run-start oracle up to length 12") {
  for (int len = 0; len <= 12; ++len) {
    for (unsigned mask = 0; mask < (1u << len); ++mask) {
      std::vector<int> bits(len), ticks(len);
      for (int i = 0; i < len; ++i) {
        bits[i] = (mask >> i) & 1;
        ticks[i] = i;
      }
      const auto edges = keyframe::rising_edges(seq_of(ticks, bits)).ticks;
      CHECK(edges == run_starts(bits));
      CHECK(static_cast<int>(edges.size()) == count_runs(bits));
    }
  }
}

TEST_CASE("available_at: worked examples and exhaustive monotonicity") {
  KeyframeSet k;
  k.ticks = {2, 7, 9};
  CHECK(keyframe::available_at(k, 10, 3).ticks == std::vector<int>{2, 7});
  CHECK(keyframe::available_at(k, 0, 1).ticks.empty());
  CHECK(keyframe::available_at(k, 9, 0).ticks == std::vector<int>{2, 7, 9});

  for (unsigned mask = 0; mask < (1u << 8); ++mask) {
    KeyframeSet s;
    for (int i = 0; i < 8; ++i)
      if ((mask >> i) & 1) s.ticks.push_back(i);
    for (int lat = 0; lat <= 4; ++lat) {
      for (int t = 0; t < 10; ++t) {
        const auto a = keyframe::available_at(s, t, lat).ticks;
        const auto b = keyframe::available_at(s, t + 1, lat).ticks;
        // monotone availability: a is a prefix (subset) of b
        CHECK(a.size() <= b.size());
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
        for (int tick : a) CHECK(tick <= t - lat);
      }
    }
  }
}

TEST_CASE("oracle detector fires exactly on progress increments") {
  DetectorConfig cfg;
  keyframe::Detector det(cfg, env::TaskId::fixed_password);
  env::LatentState two, three;
  two.digits_entered = {1, 1};
  three.digits_entered = {1, 1, 1};
  CHECK(det.detect({}, {}, std::make_pair(two, three), 10, 1));
  CHECK_FALSE(det.detect({}, {}, std::make_pair(two, two), 20, 1));
  CHECK_THROWS_AS(det.detect({}, {}, std::nullopt, 0, 1), UsageError);
}

TEST_CASE("noisy oracle with zero rates equals the oracle; flips are reproducible") {
  DetectorConfig zero;
  zero.kind = DetectorKind::noisy_oracle;
  keyframe::Detector noisy0(zero, env::TaskId::fixed_password);
  DetectorConfig cfg;
  keyframe::Detector oracle(cfg, env::TaskId::fixed_password);
  env::LatentState a, b;
  b.digits_entered = {1};
  for (int q = 0; q < 50; q += 10) {
    CHECK(noisy0.detect({}, {}, std::make_pair(a, b), q, 3) ==
          oracle.detect({}, {}, std::make_pair(a, b), q, 3));
    CHECK(noisy0.detect({}, {}, std::make_pair(a, a), q, 3) ==
          oracle.detect({}, {}, std::make_pair(a, a), q, 3));
  }

  DetectorConfig flip;
  flip.kind = DetectorKind::noisy_oracle;
  flip.fp_rate = 0.3;
  flip.fn_rate = 0.3;
  keyframe::Detector n1(flip, env::TaskId::fixed_password), n2(flip, env::TaskId::fixed_password);
  int differs = 0;
  for (int q = 0; q < 400; q += 10) {
    const bool v1 = n1.detect({}, {}, std::make_pair(a, b), q, 5);
    CHECK(v1 == n2.detect({}, {}, std::make_pair(a, b), q, 5));  // derived seeds
    if (!v1) ++differs;  // truth is true; count fn flips
  }
  CHECK(differs > 0);
  CHECK(differs < 30);
}

TEST_CASE("annotating a clean demo aligns one keyframe with every salient event") {
  const auto spec = env::EnvSpec::defaults(env::TaskId::fixed_password);
  auto ds = expert::generate_dataset(spec, 4, expert::default_style_mix(spec.task_id), 21);
  DetectorConfig cfg;  // oracle, period 10
  const auto ann = keyframe::annotate_dataset(ds, cfg);
  REQUIRE(ann.per_traj.size() == ds.trajs.size());
  CHECK(ann.dataset_digest == ds.content_digest());
  CHECK(ann.failed_queries == 0);

  for (size_t ti = 0; ti < ds.trajs.size(); ++ti) {
    std::vector<int> press_ticks;
    for (const auto& t : ds.trajs[ti].ticks)
      for (const auto& ev : t.events)
        if (ev.kind == env::EventKind::button_press) press_ticks.push_back(ev.tick);
    const auto& kf = ann.per_traj[ti].ticks;
    REQUIRE(kf.size() == press_ticks.size());  // fn = 0: no event lacks a keyframe
    CHECK(kf.size() == 7);
    for (size_t i = 0; i < kf.size(); ++i) {
      CHECK(kf[i] >= press_ticks[i]);
      CHECK(kf[i] - press_ticks[i] < cfg.query_period_ticks);  // within one query period
    }
  }

  // idempotence
  const auto ann2 = keyframe::annotate_dataset(ds, cfg);
  for (size_t ti = 0; ti < ann.per_traj.size(); ++ti)
    CHECK(ann.per_traj[ti].ticks == ann2.per_traj[ti].ticks);
}

TEST_CASE("constant_false and fn=1 detectors produce empty keyframe sets") {
  const auto spec = env::EnvSpec::defaults(env::TaskId::ingredient_insertion);
  auto ds = expert::generate_dataset(spec, 2, expert::default_style_mix(spec.task_id), 4);
  DetectorConfig cf;
  cf.kind = DetectorKind::constant_false;
  for (const auto& k : keyframe::annotate_dataset(ds, cf).per_traj) CHECK(k.ticks.empty());

  DetectorConfig fn1;
  fn1.kind = DetectorKind::noisy_oracle;
  fn1.fn_rate = 1.0 - 1e-12;  // rates live in [0,1); this flips every true in practice
  fn1.fp_rate = 0.0;
  for (const auto& k : keyframe::annotate_dataset(ds, fn1).per_traj) CHECK(k.ticks.empty());
}

TEST_CASE("annotations round-trip through their file format") {
  const auto spec = env::EnvSpec::defaults(env::TaskId::variable_password);
  auto ds = expert::generate_dataset(spec, 3, expert::default_style_mix(spec.task_id), 8);
  DetectorConfig cfg;
  const auto ann = keyframe::annotate_dataset(ds, cfg);
  std::filesystem::create_directories("/tmp/kflab_kf_test");
  keyframe::write_annotations(ann, "/tmp/kflab_kf_test/ann.json");
  const auto rd = keyframe::read_annotations("/tmp/kflab_kf_test/ann.json");
  CHECK(rd.dataset_digest == ann.dataset_digest);
  CHECK(rd.detector_digest == ann.detector_digest);
  REQUIRE(rd.per_traj.size() == ann.per_traj.size());
  for (size_t i = 0; i < rd.per_traj.size(); ++i)
    CHECK(rd.per_traj[i].ticks == ann.per_traj[i].ticks);
}

TEST_CASE("detector config validation") {
  DetectorConfig bad;
  bad.query_period_ticks = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  DetectorConfig remote;
  remote.kind = DetectorKind::remote;
  CHECK_THROWS_AS(remote.validate(), ConfigError);  // endpoint required
  DetectorConfig fp;
  fp.kind = DetectorKind::noisy_oracle;
  fp.fp_rate = 1.0;
  CHECK_THROWS_AS(fp.validate(), ConfigError);
}
