#include "kflab/regularize.hpp"

#include "kflab/errors.hpp"
#include "kflab/rng.hpp"

namespace kflab::regularize {

nlohmann::json AuxConfig::to_json() const {
  return {{"ptp_weight", ptp_weight},
          {"gt_state_weight", gt_state_weight},
          {"ptp_targets", ptp_targets}};
}

AuxConfig AuxConfig::from_json(const nlohmann::json& j) {
  AuxConfig a;
  a.ptp_weight = j.at("ptp_weight").get<double>();
  a.gt_state_weight = j.at("gt_state_weight").get<double>();
  if (j.contains("ptp_targets")) a.ptp_targets = j.at("ptp_targets").get<std::string>();
  if (a.ptp_weight < 0 || a.gt_state_weight < 0)
    throw ConfigError("AuxConfig: weights must be non-negative");
  return a;
}

int build_ptp_loss(const policy::PolicyNet& net, nn::Tape& tape,
                   const policy::ForwardNodes& f,
                   const std::vector<policy::BatchSample>& batch) {
  if (net.mode().kind != policy::ModeKind::naive_history)
    throw UsageError("ptp_loss: defined over naive_history contexts only");
  if (f.ctx_rows.empty())
    throw UsageError("ptp_loss: batch carries no live context frames");

  const int pred = net.apply_ptp_head(tape, f);
  Mat target(static_cast<int>(f.ctx_rows.size()), net.arch().action_dim);
  for (size_t r = 0; r < f.ctx_owner.size(); ++r) {
    const auto [b, slot] = f.ctx_owner[r];
    const auto& pa = batch[b].past_actions[slot];
    if (static_cast<int>(pa.size()) != net.arch().action_dim)
      throw UsageError("ptp_loss: missing past action for a live context frame");
    for (int d = 0; d < net.arch().action_dim; ++d) target.at(static_cast<int>(r), d) = pa[d];
  }
  return tape.mse(pred, target);
}

int build_gt_loss(const policy::PolicyNet& net, nn::Tape& tape,
                  const policy::ForwardNodes& f,
                  const std::vector<policy::BatchSample>& batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const auto& s : batch) {
    if (s.progress_class < 0 || s.progress_class >= net.gt_classes())
      throw UsageError("gt_state_loss: label outside the task's class range");
    labels.push_back(s.progress_class);
  }
  const int logits = net.apply_gt_head(tape, f);
  return tape.softmax_xent(logits, std::move(labels));
}

namespace {
double standalone(const policy::PolicyNet& net, const std::vector<policy::BatchSample>& batch,
                  uint64_t noise_seed, bool want_ptp) {
  policy::DdpmGraph g;
  policy::build_ddpm_loss(net, batch, noise_seed, false, g);
  const int node = want_ptp ? build_ptp_loss(net, g.tape, g.nodes, batch)
                            : build_gt_loss(net, g.tape, g.nodes, batch);
  return g.tape.scalar(node);
}
}  // namespace

double ptp_loss(const policy::PolicyNet& net, const std::vector<policy::BatchSample>& batch,
                uint64_t noise_seed) {
  return standalone(net, batch, noise_seed, true);
}

double gt_state_loss(const policy::PolicyNet& net,
                     const std::vector<policy::BatchSample>& batch, uint64_t noise_seed) {
  return standalone(net, batch, noise_seed, false);
}

}  // namespace kflab::regularize
