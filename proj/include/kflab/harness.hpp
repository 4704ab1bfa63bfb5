#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kflab/dataset_io.hpp"
#include "kflab/keyframe.hpp"
#include "kflab/policy.hpp"
#include "kflab/probe.hpp"
#include "kflab/regularize.hpp"
#include "kflab/rollout.hpp"
#include "kflab/train.hpp"

namespace kflab::harness {

// Set this environment variable to prefix relative output_dir paths.
inline constexpr const char* kArtifactsRootEnv = "KFLAB_ARTIFACTS_ROOT";

// Flat, typed experiment description. File format: one JSON object whose
// keys mirror the fields below.
struct ExperimentConfig {
  std::string task = "fixed_password";
  std::string method = "current_obs";  // current_obs | naive_history | ptp | bpp | oracle | naive+gt_state

  int n_demos = -1;  // -1 = task default (300 fixed / 400 variable / 400 ingredient)
  uint64_t data_seed = 7;
  std::string dataset_path;  // reuse an existing dataset file instead of generating

  int chunk_len = 10;
  int exec_len = 10;
  int width = 48, layers = 2, heads = 4, enc_width = 64, enc_depth = 2;
  double dropout = 0.0;
  int diff_train_steps = 50, diff_sample_steps = 50;

  // mode overrides; -1 keeps the task default
  int num_past = -1, stride_ticks = -1, max_keyframes = -1, latency_train = -1;

  int train_steps = 2500, batch_size = 32;
  double lr = 1e-3;
  bool frozen_encoder = false;
  double ptp_weight = 1.0;        // applied when method == ptp
  double gt_state_weight = 1.0;   // applied when method == naive+gt_state

  bool has_detector = false;
  keyframe::DetectorConfig detector;

  int eval_episodes = 50;
  std::vector<uint64_t> seeds{1, 2, 3};
  std::string output_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::string& path);
  std::string digest() const;

  int default_demos() const;
  env::EnvSpec env_spec() const;
  policy::ConditioningMode mode() const;
  policy::ArchConfig arch() const;
  regularize::AuxConfig aux() const;
  train::TrainConfig train_config(uint64_t seed) const;
  std::string detector_label() const;  // compact descriptor for result rows
  std::string resolved_output_dir() const;
};

struct EvalStats {
  double mean = 0.0;
  double se = 0.0;  // over independent seed means
  std::vector<double> per_seed;
  int episode_count = 0;
  std::string config_digest;
};

using AgentFactory = std::function<std::unique_ptr<rollout::Agent>(uint64_t env_seed)>;

EvalStats evaluate_agents(const env::EnvSpec& spec, const AgentFactory& make,
                          int n_episodes, const std::vector<uint64_t>& seeds,
                          std::vector<rollout::RolloutResult>* keep = nullptr);

EvalStats evaluate(const policy::Checkpoint& ckpt, const keyframe::DetectorConfig* det,
                   int exec_len, int n_episodes, const std::vector<uint64_t>& seeds,
                   std::vector<rollout::RolloutResult>* keep = nullptr);

// Full pipeline: dataset -> annotations (bpp) -> per-seed train/eval/probe ->
// result CSVs. Stages already recorded in the manifest are skipped. Returns
// the artifacts directory.
std::string run_experiment(const std::string& config_path);
std::string run_experiment(const ExperimentConfig& cfg);

// Aggregates eval.csv / probe.csv files under root into comparison tables
// (summary.csv, chunk.csv, data_size.csv, detector_noise.csv, probe_summary.csv
// and report.txt). Returns the human-readable report text.
std::string report(const std::string& artifacts_root);

}  // namespace kflab::harness
