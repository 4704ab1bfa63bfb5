#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kflab/dataset_io.hpp"
#include "kflab/errors.hpp"
#include "kflab/expert.hpp"

using namespace kflab;
using env::EnvSpec;
using env::TaskId;

namespace {
std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}
const std::string kTmp = "/tmp/kflab_expert_test";
}  // namespace

TEST_CASE("noiseless scripted expert solves fixed_password with exactly 7 presses") {
  const auto spec = EnvSpec::defaults(TaskId::fixed_password);
  expert::OperatorStyle style{"clean", 1.0, 2, 0.0, expert::Ordering::nearest_first};
  const auto traj = expert::demonstrate(spec, style, 42);
  CHECK(traj.score == doctest::Approx(1.0));
  int presses = 0;
  for (const auto& t : traj.ticks)
    for (const auto& ev : t.events)
      if (ev.kind == env::EventKind::button_press) ++presses;
  CHECK(presses == 7);
}

TEST_CASE("noiseless scripted expert inserts two lemons then presses completion") {
  const auto spec = EnvSpec::defaults(TaskId::ingredient_insertion);
  expert::OperatorStyle style{"clean", 1.0, 4, 0.0, expert::Ordering::nearest_first};
  const auto traj = expert::demonstrate(spec, style, 5);
  CHECK(traj.score == doctest::Approx(1.0));
  int inserted = 0;
  long long press_tick = -1, last_drop = -1;
  for (const auto& t : traj.ticks)
    for (const auto& ev : t.events) {
      if (ev.kind == env::EventKind::lemon_drop && ev.value == 1) {
        ++inserted;
        last_drop = ev.tick;
      }
      if (ev.kind == env::EventKind::completion_press) press_tick = ev.tick;
    }
  CHECK(inserted == 2);
  CHECK(press_tick > last_drop);
}

TEST_CASE("default style mix stays near-expert across seeds and tasks") {
  for (auto task : {TaskId::fixed_password, TaskId::variable_password, TaskId::ingredient_insertion}) {
    const auto spec = EnvSpec::defaults(task);
    const auto mix = expert::default_style_mix(task);
    double total = 0;
    int n = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
      const auto& style = mix[seed % mix.size()].style;
      total += expert::demonstrate(spec, style, seed).score;
      ++n;
    }
    CHECK(total / n >= 0.95);
  }
}

TEST_CASE("expert reads the variable password from the observation") {
  const auto spec = EnvSpec::defaults(TaskId::variable_password);
  expert::OperatorStyle style{"clean", 1.0, 2, 0.0, expert::Ordering::nearest_first};
  for (uint64_t seed : {1u, 2u, 3u, 4u}) {
    const auto traj = expert::demonstrate(spec, style, seed);
    CHECK(traj.score == doctest::Approx(1.0));
  }
}

TEST_CASE("generate_dataset: shared digest, determinism, byte-identical files") {
  std::filesystem::create_directories(kTmp);
  auto spec = EnvSpec::defaults(TaskId::fixed_password);
  const auto mix = expert::default_style_mix(spec.task_id);
  const auto ds1 = expert::generate_dataset(spec, 10, mix, 77);
  CHECK(ds1.trajs.size() == 10);
  for (const auto& t : ds1.trajs) CHECK(t.spec_digest == spec.digest());

  const auto ds2 = expert::generate_dataset(spec, 10, mix, 77);
  expert::write_dataset(ds1, kTmp + "/a.jsonl");
  expert::write_dataset(ds2, kTmp + "/b.jsonl");
  CHECK(slurp(kTmp + "/a.jsonl") == slurp(kTmp + "/b.jsonl"));
  CHECK(ds1.content_digest() == ds2.content_digest());
}

TEST_CASE("stored trajectories replay bit-exactly through the environment") {
  const auto spec = EnvSpec::defaults(TaskId::variable_password);
  const auto ds = expert::generate_dataset(spec, 5, expert::default_style_mix(spec.task_id), 3);
  for (const auto& t : ds.trajs) CHECK(expert::replays_identically(spec, t));
}

TEST_CASE("style diversity shows up as the configured episode-length ratio") {
  const auto spec = EnvSpec::defaults(TaskId::ingredient_insertion);
  expert::OperatorStyle fast{"fast", 1.0, 0, 0.0, expert::Ordering::nearest_first};
  expert::OperatorStyle slow{"slow", 0.5, 0, 0.0, expert::Ordering::nearest_first};
  double len_fast = 0, len_slow = 0;
  const int n = 12;
  for (uint64_t s = 0; s < n; ++s) {
    len_fast += expert::demonstrate(spec, fast, s).length();
    len_slow += expert::demonstrate(spec, slow, s).length();
  }
  const double ratio = len_slow / len_fast;
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.10));
}

TEST_CASE("dataset io: round trip, truncation, bad version, corrupt line") {
  std::filesystem::create_directories(kTmp);
  const auto spec = EnvSpec::defaults(TaskId::ingredient_insertion);
  const auto ds = expert::generate_dataset(spec, 3, expert::default_style_mix(spec.task_id), 9);
  const std::string path = kTmp + "/ds.jsonl";
  expert::write_dataset(ds, path);

  const auto rd = expert::read_dataset(path);
  CHECK(rd.trajs.size() == ds.trajs.size());
  CHECK(rd.content_digest() == ds.content_digest());
  CHECK(rd.spec.task_id == spec.task_id);
  for (size_t i = 0; i < ds.trajs.size(); ++i) {
    CHECK(rd.trajs[i].seed == ds.trajs[i].seed);
    CHECK(rd.trajs[i].ticks.size() == ds.trajs[i].ticks.size());
    CHECK(rd.trajs[i].ticks[3].obs == ds.trajs[i].ticks[3].obs);
  }

  // truncation at a line boundary: fewer records than the header declares
  const std::string full = slurp(path);
  {
    const auto cut = full.rfind('\n', full.size() - 2);
    std::ofstream f(kTmp + "/trunc.jsonl", std::ios::binary);
    f << full.substr(0, cut + 1);
  }
  CHECK_THROWS_AS(expert::read_dataset(kTmp + "/trunc.jsonl"), IntegrityError);
  // truncation mid-line is caught as a corrupt record
  {
    std::ofstream f(kTmp + "/trunc2.jsonl", std::ios::binary);
    f << full.substr(0, full.size() * 2 / 3);
  }
  CHECK_THROWS_AS(expert::read_dataset(kTmp + "/trunc2.jsonl"), ParseError);

  // unknown version
  {
    auto pos = full.find('\n');
    nlohmann::json header = nlohmann::json::parse(full.substr(0, pos));
    header["format_version"] = 999;
    std::ofstream f(kTmp + "/v999.jsonl", std::ios::binary);
    f << header.dump() << full.substr(pos);
  }
  CHECK_THROWS_AS(expert::read_dataset(kTmp + "/v999.jsonl"), UnsupportedVersionError);

  // corrupt record line carries its line number
  {
    auto pos = full.find('\n');
    pos = full.find('\n', pos + 1);  // keep header + traj meta
    std::ofstream f(kTmp + "/corrupt.jsonl", std::ios::binary);
    f << full.substr(0, pos + 1) << "{not json\n" << full.substr(pos + 1);
  }
  try {
    expert::read_dataset(kTmp + "/corrupt.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("weights must sum to one and n must be positive") {
  const auto spec = EnvSpec::defaults(TaskId::fixed_password);
  auto mix = expert::default_style_mix(spec.task_id);
  CHECK_THROWS_AS(expert::generate_dataset(spec, 0, mix, 1), ConfigError);
  mix[0].weight = 0.9;
  CHECK_THROWS_AS(expert::generate_dataset(spec, 1, mix, 1), ConfigError);
}
