#include "kflab/rollout.hpp"

#include <algorithm>

#include "kflab/errors.hpp"
#include "kflab/rng.hpp"

namespace kflab::rollout {

PolicyAgent::PolicyAgent(const policy::Checkpoint& ckpt, int exec_len,
                         const keyframe::DetectorConfig* detector_cfg, uint64_t seed)
    : net_(ckpt.instantiate()), exec_len_(exec_len), seed_(seed) {
  if (exec_len_ <= 0 || exec_len_ > net_.arch().chunk_len)
    throw UsageError("PolicyAgent: exec_len must lie in [1, chunk_len]");
  if (net_.mode().kind == policy::ModeKind::bpp) {
    if (!detector_cfg) throw UsageError("PolicyAgent: bpp mode needs a detector");
    detector_.emplace(*detector_cfg, ckpt.spec.task_id);
  }
}

env::Action PolicyAgent::act(const env::Env& e) {
  const int t = e.tick();
  if (static_cast<int>(obs_hist_.size()) == t) {
    obs_hist_.push_back(e.obs().flat());
    latent_hist_.push_back(e.latent());
  }

  if (detector_ && t % detector_->config().query_period_ticks == 0) {
    const int prev_q = std::max(0, t - detector_->config().query_period_ticks);
    const bool v = detector_->detect_or_false(
        obs_hist_[prev_q], obs_hist_[t],
        std::make_pair(latent_hist_[prev_q], latent_hist_[t]), t, e.seed());
    seq_.verdicts.push_back({t, v});
  }

  if (plan_.empty() || plan_pos_ >= exec_len_) {
    policy::PolicyInput input;
    const auto& mode = net_.mode();
    if (mode.kind == policy::ModeKind::bpp) {
      keyframe::KeyframeSet edges = keyframe::rising_edges(seq_);
      input = policy::assemble_context(obs_hist_, mode, &edges, t, nullptr,
                                       detector_->config().latency_ticks);
    } else if (mode.kind == policy::ModeKind::oracle) {
      const auto priv = env::privileged_encoding(e.spec(), e.latent());
      input = policy::assemble_context(obs_hist_, mode, nullptr, t, &priv);
    } else {
      input = policy::assemble_context(obs_hist_, mode, nullptr, t, nullptr);
    }
    plan_ = policy::sample_chunk(net_, input,
                                 derive_seed(seed_, 0xc4a2, static_cast<uint64_t>(decisions_)));
    plan_pos_ = 0;
    ++decisions_;
  }

  const int ad = net_.arch().action_dim;
  const double* a = plan_.data() + static_cast<size_t>(plan_pos_) * ad;
  ++plan_pos_;
  env::Action out;
  out.target = {std::clamp(a[0], 0.0, 1.0), std::clamp(a[1], 0.0, 1.0)};
  out.actuate = std::clamp(a[2], 0.0, 1.0);
  return out;
}

RolloutResult run_episode(const env::EnvSpec& spec, Agent& agent, uint64_t env_seed) {
  env::Env e(spec, env_seed);
  RolloutResult res;
  res.traj.spec_digest = spec.digest();
  res.traj.seed = env_seed;
  res.traj.style_id = "rollout";
  res.traj.ticks.push_back({0, e.obs().flat(), {}, e.latent(), {}});

  while (!e.done()) {
    const env::Action a = agent.act(e);
    auto step = e.step(a);
    agent.observe(step);
    res.traj.ticks.back().action = {a.target.x, a.target.y, a.actuate};
    res.traj.ticks.push_back({e.tick(), step.obs.flat(), {}, step.latent, step.events});
  }
  res.score = env::score(spec, res.traj);
  res.traj.score = res.score;
  if (const auto* d = agent.detections()) res.detections = *d;
  if (auto* pa = dynamic_cast<PolicyAgent*>(&agent)) res.detector_failures = pa->detector_failures();
  return res;
}

RolloutResult rollout(const policy::Checkpoint& ckpt, const env::EnvSpec& spec,
                      const keyframe::DetectorConfig* detector_cfg, int exec_len,
                      uint64_t seed) {
  PolicyAgent agent(ckpt, exec_len, detector_cfg, seed);
  return run_episode(spec, agent, seed);
}

}  // namespace kflab::rollout
