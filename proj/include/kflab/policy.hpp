#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kflab/autodiff.hpp"
#include "kflab/env.hpp"
#include "kflab/expert.hpp"
#include "kflab/keyframe.hpp"

namespace kflab::policy {

enum class ModeKind { current_obs, naive_history, bpp, oracle };

std::string mode_kind_name(ModeKind k);
ModeKind mode_kind_from_name(const std::string& s);

struct ConditioningMode {
  ModeKind kind = ModeKind::current_obs;
  // naive_history window
  int num_past = 4;
  int stride_ticks = 10;
  // bpp
  int latency_train_ticks = 30;
  int max_keyframes = 7;

  static ConditioningMode current_obs();
  static ConditioningMode oracle();
  static ConditioningMode naive_history_defaults(env::TaskId t);
  static ConditioningMode bpp_defaults(env::TaskId t);

  int context_slots() const;
  nlohmann::json to_json() const;
  static ConditioningMode from_json(const nlohmann::json& j);
};

struct ContextFrame {
  int tick_offset = 0;  // t - frame tick
  std::vector<double> obs;
  bool pad = false;
};

// Fixed-shape policy input: frames.size() == mode.context_slots() always;
// padding absorbs the variation.
struct PolicyInput {
  std::vector<double> current_obs;
  std::vector<ContextFrame> frames;
  std::vector<double> privileged;  // oracle mode only
};

// Context assembly from a live observation buffer (index == tick).
// bpp reads observations at the latency-masked keyframe ticks, keeping the
// most recent max_keyframes; naive_history clamps pre-episode frames to
// tick 0 and marks them padding.
// latency_ticks < 0 applies the mode's training latency; rollouts pass the
// eval-time latency instead.
PolicyInput assemble_context(const std::vector<std::vector<double>>& obs_by_tick,
                             const ConditioningMode& mode,
                             const keyframe::KeyframeSet* keyframes, int t,
                             const std::vector<double>* privileged,
                             int latency_ticks = -1);

// Convenience overload over a stored trajectory; privileged vectors come
// from the recorded latent at t.
PolicyInput assemble_context(const expert::Trajectory& traj, const env::EnvSpec& spec,
                             const ConditioningMode& mode,
                             const keyframe::KeyframeSet* keyframes, int t,
                             int latency_ticks = -1);

struct ArchConfig {
  int enc_width = 64;
  int enc_depth = 2;  // 1 or 2 layers in the shared frame encoder
  int width = 48;
  int layers = 2;
  int heads = 4;
  double dropout = 0.0;
  int chunk_len = 10;
  int action_dim = 3;
  int diff_train_steps = 50;
  int diff_sample_steps = 50;
  std::string noise_schedule = "cosine";

  void validate() const;
  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
};

// Per-dimension affine map to zero mean / unit variance. Constant
// dimensions keep scale 1 so the round-trip stays exact.
struct Normalizer {
  std::vector<double> mu, sd;

  static Normalizer fit(const std::vector<const std::vector<double>*>& rows, int dim);
  static Normalizer identity(int dim);
  std::vector<double> normalize(const std::vector<double>& x) const;
  std::vector<double> denormalize(const std::vector<double>& x) const;
};

struct DiffusionSchedule {
  std::vector<double> alpha_bar;  // index = step
  std::vector<double> beta;

  static DiffusionSchedule make(const std::string& id, int steps);
};

struct ParamStore {
  std::vector<std::string> names;
  std::vector<Mat> values;

  int add(const std::string& name, Mat m);
  int find(const std::string& name) const;  // -1 when absent
  size_t count() const { return values.size(); }
  size_t total_scalars() const;
};

struct ForwardNodes {
  int eps_pred = -1;   // B x (chunk_len * action_dim)
  int pooled = -1;     // B x width, mean over current + live context (+ privileged)
  int final_feat = -1; // (B * seq) x width
  std::vector<int> param_leaf;               // tape leaf per param index
  std::vector<int> ctx_rows;                 // final_feat rows of non-pad context tokens
  std::vector<std::pair<int, int>> ctx_owner;  // (batch element, slot) per ctx row
};

// Diffusion-transformer policy: shared per-frame encoder, slot-position
// embeddings, masked self-attention trunk, epsilon-prediction head.
class PolicyNet {
 public:
  PolicyNet(const ArchConfig& arch, const ConditioningMode& mode, int obs_dim,
            int priv_dim, bool ptp_head, bool gt_head, int gt_classes,
            uint64_t init_seed);

  const ArchConfig& arch() const { return arch_; }
  const ConditioningMode& mode() const { return mode_; }
  int obs_dim() const { return obs_dim_; }
  int priv_dim() const { return priv_dim_; }
  int seq_len() const;
  bool has_ptp_head() const { return ptp_head_; }
  bool has_gt_head() const { return gt_head_; }
  int gt_classes() const { return gt_classes_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const DiffusionSchedule& schedule() const { return schedule_; }

  // Indices of encoder parameters (the frozen-encoder set).
  const std::vector<int>& encoder_param_indices() const { return enc_param_idx_; }

  ForwardNodes build_forward(nn::Tape& tape, const std::vector<PolicyInput>& batch,
                             const Mat& noised_chunks, const std::vector<int>& steps,
                             bool train_mode, uint64_t dropout_seed) const;

  // Aux head application on top of a built graph.
  int apply_ptp_head(nn::Tape& tape, const ForwardNodes& f) const;  // rows x action_dim
  int apply_gt_head(nn::Tape& tape, const ForwardNodes& f) const;   // B x classes

  Normalizer obs_norm;  // over flat observations
  Normalizer act_norm;  // over action dims

  std::vector<double> normalize_chunk(const std::vector<double>& chunk) const;
  std::vector<double> denormalize_chunk(const std::vector<double>& chunk) const;

 private:
  void validate_input(const PolicyInput& in) const;

  ArchConfig arch_;
  ConditioningMode mode_;
  int obs_dim_ = 0;
  int priv_dim_ = 0;
  bool ptp_head_ = false;
  bool gt_head_ = false;
  int gt_classes_ = 0;
  ParamStore params_;
  DiffusionSchedule schedule_;
  std::vector<int> enc_param_idx_;

  // cached param indices
  int p_enc_w0_ = -1, p_enc_b0_ = -1, p_enc_w1_ = -1, p_enc_b1_ = -1;
  int p_pos_ = -1, p_step_ = -1, p_act_w_ = -1, p_act_b_ = -1;
  int p_priv_w_ = -1, p_priv_b_ = -1;
  struct BlockIdx {
    int ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo, ln2g, ln2b, mw0, mb0, mw1, mb1;
  };
  std::vector<BlockIdx> blocks_;
  int p_lnf_g_ = -1, p_lnf_b_ = -1, p_head_w_ = -1, p_head_b_ = -1;
  int p_ptp_w_ = -1, p_ptp_b_ = -1, p_gt_w_ = -1, p_gt_b_ = -1;
};

// One training sample: input, normalized target chunk, per-slot normalized
// past actions (naive history; NaN-free only for non-pad slots), progress
// class label.
struct BatchSample {
  PolicyInput input;
  std::vector<double> chunk_norm;                  // chunk_len * action_dim
  std::vector<std::vector<double>> past_actions;   // per context slot (may be empty)
  int progress_class = 0;
};

struct DdpmGraph {
  nn::Tape tape;
  ForwardNodes nodes;
  int loss = -1;
};

// Scheduled-noise corruption + epsilon-prediction MSE. Deterministic given
// noise_seed. Throws TrainingError on a non-finite loss.
void build_ddpm_loss(const PolicyNet& net, const std::vector<BatchSample>& batch,
                     uint64_t noise_seed, bool train_mode, DdpmGraph& out);

double ddpm_loss(const PolicyNet& net, const std::vector<BatchSample>& batch,
                 uint64_t noise_seed);

// Reverse-process sampler; deterministic given seed; output denormalized.
std::vector<double> sample_chunk(const PolicyNet& net, const PolicyInput& input,
                                 uint64_t seed);

struct Checkpoint {
  int format_version = 1;
  env::EnvSpec spec;
  ArchConfig arch;
  ConditioningMode mode;
  bool ptp_head = false;
  bool gt_head = false;
  Normalizer obs_norm, act_norm;
  std::string train_config_digest;
  uint64_t seed = 0;
  ParamStore params;

  std::string canonical_json() const;
  std::string digest() const;
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  PolicyNet instantiate() const;
};

Checkpoint make_checkpoint(const PolicyNet& net, const env::EnvSpec& spec,
                           const std::string& train_digest, uint64_t seed);

}  // namespace kflab::policy
