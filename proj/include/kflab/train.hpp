#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kflab/dataset_io.hpp"
#include "kflab/keyframe.hpp"
#include "kflab/policy.hpp"
#include "kflab/regularize.hpp"

namespace kflab::train {

struct TrainConfig {
  int steps = 2500;
  int batch_size = 32;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;
  double val_fraction = 0.1;
  int val_every = 100;
  int curve_every = 25;
  bool frozen_encoder = false;
  uint64_t seed = 1;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct CurvePoint {
  int step = 0;
  double train_loss = 0;  // ddpm term
  double val_loss = -1;   // -1 until the first validation pass
  double ptp = -1;
  double gt = -1;
};

struct TrainResult {
  policy::Checkpoint checkpoint;
  std::vector<CurvePoint> curve;
  double initial_loss = 0;
  double final_loss = 0;
  std::vector<size_t> train_traj_idx;
  std::vector<size_t> val_traj_idx;
};

// Builds the per-sample chunk target from future actions with end-of-episode
// repeat padding; training samples cover every action tick of the train
// split. Annotations are required for bpp and must match the dataset digest.
TrainResult train(const expert::DemoDataset& ds, const keyframe::Annotations* ann,
                  const policy::ConditioningMode& mode, const policy::ArchConfig& arch,
                  const regularize::AuxConfig& aux, const TrainConfig& cfg);

// Sample construction shared with tests and the probe pipeline.
policy::BatchSample make_sample(const expert::Trajectory& traj, const env::EnvSpec& spec,
                                const policy::ConditioningMode& mode,
                                const policy::ArchConfig& arch,
                                const keyframe::KeyframeSet* kf, int t,
                                const policy::PolicyNet& net);

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path);

}  // namespace kflab::train
