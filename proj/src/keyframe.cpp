#include "kflab/keyframe.hpp"

#include <fstream>
#include <map>

#include "kflab/detector_remote.hpp"
#include "kflab/digest.hpp"
#include "kflab/errors.hpp"
#include "kflab/rng.hpp"

namespace kflab::keyframe {

std::string detector_kind_name(DetectorKind k) {
  switch (k) {
    case DetectorKind::oracle: return "oracle";
    case DetectorKind::noisy_oracle: return "noisy_oracle";
    case DetectorKind::remote: return "remote";
    case DetectorKind::constant_false: return "constant_false";
  }
  return "?";
}

DetectorKind detector_kind_from_name(const std::string& s) {
  if (s == "oracle") return DetectorKind::oracle;
  if (s == "noisy_oracle") return DetectorKind::noisy_oracle;
  if (s == "remote") return DetectorKind::remote;
  if (s == "constant_false") return DetectorKind::constant_false;
  throw ConfigError("unknown detector kind: " + s);
}

void DetectorConfig::validate() const {
  if (query_period_ticks <= 0)
    throw ConfigError("DetectorConfig.query_period_ticks must be positive");
  if (latency_ticks < 0) throw ConfigError("DetectorConfig.latency_ticks must be >= 0");
  if (fp_rate < 0 || fp_rate >= 1) throw ConfigError("DetectorConfig.fp_rate must lie in [0,1)");
  if (fn_rate < 0 || fn_rate >= 1) throw ConfigError("DetectorConfig.fn_rate must lie in [0,1)");
  if (kind == DetectorKind::remote && endpoint.empty())
    throw ConfigError("DetectorConfig.endpoint required for remote kind");
}

nlohmann::json DetectorConfig::to_json() const {
  return {{"kind", detector_kind_name(kind)},
          {"query_period_ticks", query_period_ticks},
          {"latency_ticks", latency_ticks},
          {"fp_rate", fp_rate},
          {"fn_rate", fn_rate},
          {"endpoint", endpoint},
          {"prompt_template_id", prompt_template_id}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.kind = detector_kind_from_name(j.at("kind").get<std::string>());
  if (j.contains("query_period_ticks")) c.query_period_ticks = j.at("query_period_ticks").get<int>();
  if (j.contains("latency_ticks")) c.latency_ticks = j.at("latency_ticks").get<int>();
  if (j.contains("fp_rate")) c.fp_rate = j.at("fp_rate").get<double>();
  if (j.contains("fn_rate")) c.fn_rate = j.at("fn_rate").get<double>();
  if (j.contains("endpoint")) c.endpoint = j.at("endpoint").get<std::string>();
  if (j.contains("prompt_template_id"))
    c.prompt_template_id = j.at("prompt_template_id").get<std::string>();
  c.validate();
  return c;
}

std::string DetectorConfig::digest() const { return digest_of(to_json().dump()); }

KeyframeSet rising_edges(const DetectionSequence& seq) {
  KeyframeSet out;
  bool prev = false;  // verdict before the first query
  int last_tick = -1;
  bool first = true;
  for (const auto& [tick, v] : seq.verdicts) {
    if (!first && tick <= last_tick)
      throw UsageError("rising_edges: query ticks must strictly increase");
    if (v && !prev) out.ticks.push_back(tick);
    prev = v;
    last_tick = tick;
    first = false;
  }
  return out;
}

KeyframeSet available_at(const KeyframeSet& k, long long t, int latency_ticks) {
  if (latency_ticks < 0) throw UsageError("available_at: latency must be >= 0");
  KeyframeSet out;
  out.source = k.source;
  for (int tick : k.ticks)
    if (tick <= t - latency_ticks) out.ticks.push_back(tick);
  return out;
}

Detector::Detector(DetectorConfig cfg, env::TaskId task)
    : cfg_(std::move(cfg)), task_(task) {
  cfg_.validate();
  if (cfg_.kind == DetectorKind::remote) {
    client_ = std::make_unique<RemoteDetectorClient>(cfg_.endpoint);
    if (cfg_.prompt_template_id.empty())
      cfg_.prompt_template_id = default_prompt_template_id(task);
  }
}

Detector::~Detector() = default;
Detector::Detector(Detector&&) noexcept = default;
Detector& Detector::operator=(Detector&&) noexcept = default;

bool Detector::detect(const std::vector<double>& prev_obs, const std::vector<double>& cur_obs,
                      const std::optional<std::pair<env::LatentState, env::LatentState>>& aux,
                      long long query_tick, uint64_t episode_seed) {
  ++queries_;
  switch (cfg_.kind) {
    case DetectorKind::constant_false:
      return false;
    case DetectorKind::oracle:
    case DetectorKind::noisy_oracle: {
      if (!aux) throw UsageError("detect: oracle kinds require latent aux");
      const bool truth = env::salient_progress(task_, aux->second) >
                         env::salient_progress(task_, aux->first);
      if (cfg_.kind == DetectorKind::oracle) return truth;
      Rng rng(derive_seed(episode_seed, 0x5e7ec7, static_cast<uint64_t>(query_tick)));
      const double u = rng.uniform();
      if (truth) return u >= cfg_.fn_rate;
      return u < cfg_.fp_rate;
    }
    case DetectorKind::remote: {
      RemoteRequest req;
      req.task_id = env::task_name(task_);
      req.prompt_template_id = cfg_.prompt_template_id;
      req.query_tick = query_tick;
      req.current_obs = cur_obs;
      req.previous_obs = prev_obs;
      const RemoteResponse resp = client_->detect(req);
      return resp.verdict == "YES";
    }
  }
  return false;
}

bool Detector::detect_or_false(
    const std::vector<double>& prev_obs, const std::vector<double>& cur_obs,
    const std::optional<std::pair<env::LatentState, env::LatentState>>& aux,
    long long query_tick, uint64_t episode_seed) {
  try {
    return detect(prev_obs, cur_obs, aux, query_tick, episode_seed);
  } catch (const DetectorError&) {
    ++failures_;
    return false;
  }
}

nlohmann::json Annotations::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& k : per_traj) per.push_back({{"ticks", k.ticks}, {"source", k.source}});
  return {{"dataset_digest", dataset_digest},
          {"detector_digest", detector_digest},
          {"per_traj", per},
          {"total_queries", total_queries},
          {"failed_queries", failed_queries}};
}

Annotations Annotations::from_json(const nlohmann::json& j) {
  Annotations a;
  a.dataset_digest = j.at("dataset_digest").get<std::string>();
  a.detector_digest = j.at("detector_digest").get<std::string>();
  for (const auto& k : j.at("per_traj")) {
    KeyframeSet ks;
    ks.ticks = k.at("ticks").get<std::vector<int>>();
    ks.source = k.at("source").get<std::string>();
    a.per_traj.push_back(std::move(ks));
  }
  a.total_queries = j.at("total_queries").get<long long>();
  a.failed_queries = j.at("failed_queries").get<long long>();
  return a;
}

Annotations annotate_dataset(const expert::DemoDataset& ds, const DetectorConfig& cfg) {
  cfg.validate();
  Annotations out;
  out.dataset_digest = ds.content_digest();
  out.detector_digest = cfg.digest();
  out.per_traj.resize(ds.trajs.size());

  long long total = 0, failed = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : total, failed)
  for (size_t ti = 0; ti < ds.trajs.size(); ++ti) {
    const auto& traj = ds.trajs[ti];
    Detector det(cfg, ds.spec.task_id);
    DetectionSequence seq;
    const int last_tick = traj.ticks.back().tick;
    // one query past the end (observation clamped to the final tick) so an
    // event inside the last partial window still gets its onset query
    const int q_max = ((last_tick + cfg.query_period_ticks - 1) / cfg.query_period_ticks) *
                      cfg.query_period_ticks;
    for (int q = 0; q <= q_max; q += cfg.query_period_ticks) {
      const int cur_t = std::min(q, last_tick);
      const int prev_t = std::min(std::max(0, q - cfg.query_period_ticks), last_tick);
      const auto& prev = traj.ticks[prev_t];
      const auto& cur = traj.ticks[cur_t];
      const bool v = det.detect_or_false(prev.obs, cur.obs,
                                         std::make_pair(prev.latent, cur.latent), q, traj.seed);
      seq.verdicts.push_back({q, v});
    }
    KeyframeSet ks = rising_edges(seq);
    ks.source = out.detector_digest;
    out.per_traj[ti] = std::move(ks);
    total += det.query_count();
    failed += det.failure_count();
  }
  out.total_queries = total;
  out.failed_queries = failed;
  return out;
}

void write_annotations(const Annotations& a, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_annotations: cannot open " + path);
  f << a.to_json().dump() << "\n";
}

Annotations read_annotations(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("read_annotations: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("read_annotations: ") + e.what());
  }
  return Annotations::from_json(j);
}

std::string default_prompt_template_id(env::TaskId task) {
  switch (task) {
    case env::TaskId::fixed_password:
    case env::TaskId::variable_password:
      return "press_onset_v1";
    case env::TaskId::ingredient_insertion:
      return "insertion_onset_v1";
  }
  return "press_onset_v1";
}

std::string prompt_template_body(const std::string& id) {
  static const std::map<std::string, std::string> kTemplates = {
      {"press_onset_v1",
       "Compare the previous and current snapshots. Answer YES if the arm "
       "completed a button press between them, otherwise answer NO. Reply "
       "with the single word YES or NO."},
      {"insertion_onset_v1",
       "Compare the previous and current snapshots. Answer YES if an object "
       "was released into the bowl between them, otherwise answer NO. Reply "
       "with the single word YES or NO."},
  };
  auto it = kTemplates.find(id);
  if (it == kTemplates.end()) throw ConfigError("unknown prompt_template_id: " + id);
  return it->second;
}

}  // namespace kflab::keyframe
