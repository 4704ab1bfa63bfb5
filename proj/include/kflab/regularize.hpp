#pragma once

#include <json.hpp>

#include "kflab/policy.hpp"

namespace kflab::regularize {

// Auxiliary objectives layered onto training. A weight of zero disables the
// corresponding loss and removes its head parameters from the checkpoint.
struct AuxConfig {
  double ptp_weight = 0.0;
  double gt_state_weight = 0.0;
  std::string ptp_targets = "all_history";  // context positions with past-action heads

  bool ptp_enabled() const { return ptp_weight > 0.0; }
  bool gt_enabled() const { return gt_state_weight > 0.0; }

  nlohmann::json to_json() const;
  static AuxConfig from_json(const nlohmann::json& j);
};

// Past-token prediction: a shared regression head on each non-pad history
// frame's trunk features predicts the demonstrated action at that frame's
// tick. Defined over naive_history contexts only.
int build_ptp_loss(const policy::PolicyNet& net, nn::Tape& tape,
                   const policy::ForwardNodes& f,
                   const std::vector<policy::BatchSample>& batch);

// Golden ground-truth-state regularizer: cross-entropy of a classifier head
// on pooled trunk features against the progress one-hot.
int build_gt_loss(const policy::PolicyNet& net, nn::Tape& tape,
                  const policy::ForwardNodes& f,
                  const std::vector<policy::BatchSample>& batch);

// Standalone evaluations (fresh forward pass, eval mode, seeded).
double ptp_loss(const policy::PolicyNet& net, const std::vector<policy::BatchSample>& batch,
                uint64_t noise_seed = 0);
double gt_state_loss(const policy::PolicyNet& net,
                     const std::vector<policy::BatchSample>& batch, uint64_t noise_seed = 0);

}  // namespace kflab::regularize
