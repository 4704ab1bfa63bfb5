#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kflab/env.hpp"
#include "kflab/expert.hpp"

namespace kflab::keyframe {

enum class DetectorKind { oracle, noisy_oracle, remote, constant_false };

std::string detector_kind_name(DetectorKind k);
DetectorKind detector_kind_from_name(const std::string& s);

struct DetectorConfig {
  DetectorKind kind = DetectorKind::oracle;
  int query_period_ticks = 10;  // 1 Hz at 10 ticks/s
  int latency_ticks = 30;       // verdict for tick q becomes visible at q + latency
  double fp_rate = 0.0;         // noisy_oracle: false -> true flip probability
  double fn_rate = 0.0;         // noisy_oracle: true -> false flip probability
  std::string endpoint;         // remote: host:port
  std::string prompt_template_id;

  void validate() const;
  nlohmann::json to_json() const;
  static DetectorConfig from_json(const nlohmann::json& j);
  std::string digest() const;
};

struct KeyframeSet {
  std::vector<int> ticks;  // strictly increasing query ticks
  std::string source;      // detector digest
};

struct DetectionSequence {
  std::vector<std::pair<int, bool>> verdicts;  // (query_tick, verdict), ticks increasing
};

// Onset extraction: query ticks whose verdict is true while the previous
// query's verdict is false. The verdict before the first query counts as
// false, so an initial true is an edge.
KeyframeSet rising_edges(const DetectionSequence& seq);

// Subset of K with k <= t - latency, order preserved.
KeyframeSet available_at(const KeyframeSet& k, long long t, int latency_ticks);

class RemoteDetectorClient;

// Binds a detector config to a task. Oracle kinds compare latent progress;
// noisy_oracle flips the oracle verdict with per-query derived seeds; remote
// sends the wire request. Remote failures surface as DetectorError — use
// detect_or_false where degradation to a missed keyframe is wanted.
class Detector {
 public:
  Detector(DetectorConfig cfg, env::TaskId task);
  ~Detector();
  Detector(Detector&&) noexcept;
  Detector& operator=(Detector&&) noexcept;

  const DetectorConfig& config() const { return cfg_; }

  bool detect(const std::vector<double>& prev_obs, const std::vector<double>& cur_obs,
              const std::optional<std::pair<env::LatentState, env::LatentState>>& oracle_aux,
              long long query_tick, uint64_t episode_seed);

  bool detect_or_false(const std::vector<double>& prev_obs, const std::vector<double>& cur_obs,
                       const std::optional<std::pair<env::LatentState, env::LatentState>>& aux,
                       long long query_tick, uint64_t episode_seed);

  int failure_count() const { return failures_; }
  int query_count() const { return queries_; }

 private:
  DetectorConfig cfg_;
  env::TaskId task_;
  int failures_ = 0;
  int queries_ = 0;
  std::unique_ptr<RemoteDetectorClient> client_;
};

struct Annotations {
  std::string dataset_digest;
  std::string detector_digest;
  std::vector<KeyframeSet> per_traj;
  long long total_queries = 0;
  long long failed_queries = 0;

  nlohmann::json to_json() const;
  static Annotations from_json(const nlohmann::json& j);
};

// Runs the detector at every query tick of every trajectory and extracts
// rising edges. Remote failures degrade to verdict=false and are counted.
Annotations annotate_dataset(const expert::DemoDataset& ds, const DetectorConfig& cfg);

void write_annotations(const Annotations& a, const std::string& path);
Annotations read_annotations(const std::string& path);

// Inert request-template metadata shipped with the wire protocol.
std::string default_prompt_template_id(env::TaskId task);
std::string prompt_template_body(const std::string& id);

}  // namespace kflab::keyframe
