#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kflab/mat.hpp"
#include "kflab/policy.hpp"
#include "kflab/rollout.hpp"

namespace kflab::probe {

// Multinomial linear probe with L2 penalty on frozen policy features.
struct LinearProbe {
  Mat w;  // feature_dim x classes
  std::vector<double> b;

  int predict(const double* feat, int dim) const;
};

struct ProbeReport {
  std::string task;
  std::string checkpoint_digest;
  double iid_accuracy = 0.0;
  double rollout_accuracy = 0.0;
  std::vector<int> class_counts_iid;
  std::vector<int> class_counts_rollout;
  uint64_t probe_seed = 0;
};

// Pooled trunk features (pre-head) for inputs assembled under the
// checkpoint's own conditioning mode. Parameters are untouched.
Mat extract_features(const policy::Checkpoint& ckpt,
                     const std::vector<policy::PolicyInput>& inputs);

// Trains to convergence on the given split; deterministic given seed.
// Throws UsageError when fewer than two classes are present.
LinearProbe fit_probe(const Mat& features, const std::vector<int>& labels, uint64_t seed);

double probe_accuracy(const LinearProbe& p, const Mat& features,
                      const std::vector<int>& labels);

// Probe protocol: fit on the expert train split, evaluate on the expert val
// split (iid) and on this checkpoint's own rollouts, sampling query ticks
// with class-balanced downsampling on every set.
ProbeReport probe_report(const policy::Checkpoint& ckpt, const expert::DemoDataset& ds,
                         const keyframe::Annotations* ann,
                         const std::vector<size_t>& fit_traj_idx,
                         const std::vector<size_t>& val_traj_idx,
                         const std::vector<rollout::RolloutResult>& rollouts,
                         const keyframe::DetectorConfig* det_cfg, uint64_t seed);

}  // namespace kflab::probe
