#pragma once

#include <cstdint>
#include <memory>
#include <optional>

#include "kflab/env.hpp"
#include "kflab/expert.hpp"
#include "kflab/keyframe.hpp"
#include "kflab/policy.hpp"

namespace kflab::rollout {

class Agent {
 public:
  virtual ~Agent() = default;
  virtual env::Action act(const env::Env& e) = 0;
  virtual void observe(const env::StepResult& r) { (void)r; }
  virtual const keyframe::DetectionSequence* detections() const { return nullptr; }
};

// Receding-horizon policy execution: sample a chunk, run exec_len actions,
// re-assemble the context, repeat. For bpp the agent queries the detector at
// query ticks; the verdict for tick q becomes usable at q + latency.
class PolicyAgent : public Agent {
 public:
  PolicyAgent(const policy::Checkpoint& ckpt, int exec_len,
              const keyframe::DetectorConfig* detector_cfg, uint64_t seed);

  env::Action act(const env::Env& e) override;
  const keyframe::DetectionSequence* detections() const override { return &seq_; }
  int detector_failures() const { return detector_ ? detector_->failure_count() : 0; }

 private:
  policy::PolicyNet net_;
  int exec_len_;
  uint64_t seed_;
  std::optional<keyframe::Detector> detector_;
  std::vector<std::vector<double>> obs_hist_;
  std::vector<env::LatentState> latent_hist_;
  keyframe::DetectionSequence seq_;
  std::vector<double> plan_;
  int plan_pos_ = 0;
  int decisions_ = 0;
};

class ExpertAgent : public Agent {
 public:
  ExpertAgent(const env::EnvSpec& spec, const expert::OperatorStyle& style, uint64_t seed)
      : ctl_(spec, style, seed) {}
  env::Action act(const env::Env& e) override { return ctl_.act(e); }
  void observe(const env::StepResult& r) override { ctl_.observe_events(r.events); }

 private:
  expert::ExpertController ctl_;
};

struct RolloutResult {
  expert::Trajectory traj;
  double score = 0;
  keyframe::DetectionSequence detections;
  int detector_failures = 0;
};

RolloutResult run_episode(const env::EnvSpec& spec, Agent& agent, uint64_t env_seed);

// Checkpoint convenience wrapper.
RolloutResult rollout(const policy::Checkpoint& ckpt, const env::EnvSpec& spec,
                      const keyframe::DetectorConfig* detector_cfg, int exec_len,
                      uint64_t seed);

}  // namespace kflab::rollout
