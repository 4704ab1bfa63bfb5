#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kflab/detector_mock.hpp"
#include "kflab/detector_remote.hpp"
#include "kflab/errors.hpp"
#include "kflab/expert.hpp"
#include "kflab/keyframe.hpp"

using namespace kflab;
using keyframe::DetectorConfig;
using keyframe::DetectorKind;
using keyframe::MockDetectorService;
using keyframe::RemoteDetectorClient;
using keyframe::RemoteRequest;

namespace {
RemoteRequest request_at(long long tick) {
  RemoteRequest r;
  r.task_id = "fixed_password";
  r.prompt_template_id = keyframe::default_prompt_template_id(env::TaskId::fixed_password);
  r.query_tick = tick;
  r.current_obs = {0.1, 0.2};
  r.previous_obs = {0.1, 0.2};
  return r;
}
}  // namespace

TEST_CASE("mock service round trip: replayed verdicts come back as YES/NO") {
  MockDetectorService svc;
  svc.load_replay("ep0", {{0, false}, {10, true}, {20, false}});
  svc.start();
  RemoteDetectorClient client(svc.endpoint());

  CHECK(client.detect(request_at(10)).verdict == "YES");
  CHECK(client.detect(request_at(0)).verdict == "NO");
  CHECK(client.detect(request_at(999)).verdict == "NO");  // unknown tick
  svc.stop();
}

TEST_CASE("artificial latency is recorded but does not change the verdict") {
  MockDetectorService::Options opt;
  opt.artificial_latency_ms = 200;
  MockDetectorService svc(opt);
  svc.load_replay("ep0", {{10, true}});
  svc.start();
  RemoteDetectorClient client(svc.endpoint());
  const auto resp = client.detect(request_at(10));
  CHECK(resp.verdict == "YES");
  CHECK(resp.latency_ms >= 200);
  svc.stop();
}

TEST_CASE("a verdict outside YES/NO is a protocol violation") {
  MockDetectorService::Options opt;
  opt.force_verdict = "MAYBE";
  MockDetectorService svc(opt);
  svc.start();
  RemoteDetectorClient client(svc.endpoint());
  try {
    client.detect(request_at(0));
    FAIL("expected DetectorError");
  } catch (const DetectorError& e) {
    CHECK(std::string(e.what()).find("MAYBE") != std::string::npos);
    CHECK(e.query_tick == 0);
  }
  svc.stop();
}

TEST_CASE("unknown protocol version is rejected by the service") {
  MockDetectorService svc;
  svc.start();
  RemoteDetectorClient client(svc.endpoint());
  auto req = request_at(0);
  req.protocol_version = 42;
  CHECK_THROWS_AS(client.detect(req), DetectorError);
  svc.stop();
}

TEST_CASE("transport failure degrades to verdict=false through detect_or_false") {
  DetectorConfig cfg;
  cfg.kind = DetectorKind::remote;
  cfg.endpoint = "127.0.0.1:1";  // nothing listens here
  keyframe::Detector det(cfg, env::TaskId::fixed_password);
  CHECK_THROWS_AS(det.detect({0.0}, {0.0}, std::nullopt, 30, 1), DetectorError);
  CHECK_FALSE(det.detect_or_false({0.0}, {0.0}, std::nullopt, 30, 1));
  CHECK(det.failure_count() == 1);
}

TEST_CASE("remote annotation through the mock equals oracle annotation") {
  const auto spec = env::EnvSpec::defaults(env::TaskId::fixed_password);
  auto ds = expert::generate_dataset(spec, 1, {{expert::OperatorStyle{}, 1.0}}, 31);

  DetectorConfig oracle_cfg;  // defaults: oracle
  const auto oracle_ann = keyframe::annotate_dataset(ds, oracle_cfg);

  // replay the oracle's per-query verdicts into the mock
  MockDetectorService svc;
  {
    keyframe::Detector oracle(oracle_cfg, spec.task_id);
    std::vector<std::pair<long long, bool>> verdicts;
    const auto& traj = ds.trajs[0];
    for (int q = 0; q <= traj.ticks.back().tick; q += oracle_cfg.query_period_ticks) {
      const int prev = std::max(0, q - oracle_cfg.query_period_ticks);
      verdicts.push_back({q, oracle.detect(traj.ticks[prev].obs, traj.ticks[q].obs,
                                           std::make_pair(traj.ticks[prev].latent,
                                                          traj.ticks[q].latent),
                                           q, traj.seed)});
    }
    svc.load_replay("traj0", verdicts);
  }
  svc.start();

  DetectorConfig remote_cfg;
  remote_cfg.kind = DetectorKind::remote;
  remote_cfg.endpoint = svc.endpoint();
  const auto remote_ann = keyframe::annotate_dataset(ds, remote_cfg);
  svc.stop();

  CHECK(remote_ann.failed_queries == 0);
  REQUIRE(remote_ann.per_traj.size() == 1);
  CHECK(remote_ann.per_traj[0].ticks == oracle_ann.per_traj[0].ticks);
  CHECK(remote_ann.per_traj[0].ticks.size() == 7);
}

TEST_CASE("prompt templates exist for every task and unknown ids are rejected") {
  for (auto t : {env::TaskId::fixed_password, env::TaskId::variable_password,
                 env::TaskId::ingredient_insertion}) {
    const auto id = keyframe::default_prompt_template_id(t);
    CHECK_FALSE(keyframe::prompt_template_body(id).empty());
  }
  CHECK_THROWS_AS(keyframe::prompt_template_body("nope"), ConfigError);
}
