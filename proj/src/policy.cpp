#include "kflab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

#include "kflab/digest.hpp"
#include "kflab/errors.hpp"
#include "kflab/rng.hpp"

namespace kflab::policy {

std::string mode_kind_name(ModeKind k) {
  switch (k) {
    case ModeKind::current_obs: return "current_obs";
    case ModeKind::naive_history: return "naive_history";
    case ModeKind::bpp: return "bpp";
    case ModeKind::oracle: return "oracle";
  }
  return "?";
}

ModeKind mode_kind_from_name(const std::string& s) {
  if (s == "current_obs") return ModeKind::current_obs;
  if (s == "naive_history") return ModeKind::naive_history;
  if (s == "bpp") return ModeKind::bpp;
  if (s == "oracle") return ModeKind::oracle;
  throw ConfigError("unknown conditioning mode: " + s);
}

ConditioningMode ConditioningMode::current_obs() {
  ConditioningMode m;
  m.kind = ModeKind::current_obs;
  return m;
}

ConditioningMode ConditioningMode::oracle() {
  ConditioningMode m;
  m.kind = ModeKind::oracle;
  return m;
}

ConditioningMode ConditioningMode::naive_history_defaults(env::TaskId t) {
  ConditioningMode m;
  m.kind = ModeKind::naive_history;
  if (t == env::TaskId::ingredient_insertion) {
    m.num_past = 5;
    m.stride_ticks = 26;
  } else {
    m.num_past = 4;
    m.stride_ticks = 10;
  }
  return m;
}

ConditioningMode ConditioningMode::bpp_defaults(env::TaskId t) {
  ConditioningMode m;
  m.kind = ModeKind::bpp;
  m.latency_train_ticks = 30;
  switch (t) {
    case env::TaskId::fixed_password: m.max_keyframes = 7; break;
    case env::TaskId::variable_password: m.max_keyframes = 4; break;
    case env::TaskId::ingredient_insertion: m.max_keyframes = 2; break;
  }
  return m;
}

int ConditioningMode::context_slots() const {
  switch (kind) {
    case ModeKind::current_obs:
    case ModeKind::oracle: return 0;
    case ModeKind::naive_history: return num_past;
    case ModeKind::bpp: return max_keyframes;
  }
  return 0;
}

nlohmann::json ConditioningMode::to_json() const {
  return {{"kind", mode_kind_name(kind)},
          {"num_past", num_past},
          {"stride_ticks", stride_ticks},
          {"latency_train_ticks", latency_train_ticks},
          {"max_keyframes", max_keyframes}};
}

ConditioningMode ConditioningMode::from_json(const nlohmann::json& j) {
  ConditioningMode m;
  m.kind = mode_kind_from_name(j.at("kind").get<std::string>());
  m.num_past = j.at("num_past").get<int>();
  m.stride_ticks = j.at("stride_ticks").get<int>();
  m.latency_train_ticks = j.at("latency_train_ticks").get<int>();
  m.max_keyframes = j.at("max_keyframes").get<int>();
  return m;
}

namespace {
PolicyInput assemble_impl(const std::function<const std::vector<double>&(int)>& obs_at,
                          const ConditioningMode& mode,
                          const keyframe::KeyframeSet* keyframes, int t,
                          const std::vector<double>* privileged, int latency_ticks) {
  PolicyInput out;
  out.current_obs = obs_at(t);

  switch (mode.kind) {
    case ModeKind::current_obs:
      break;
    case ModeKind::oracle:
      if (!privileged) throw UsageError("assemble_context: oracle mode needs a privileged vector");
      out.privileged = *privileged;
      break;
    case ModeKind::naive_history: {
      for (int j = 1; j <= mode.num_past; ++j) {
        const int raw = t - mode.stride_ticks * j;
        const int tick = std::max(0, raw);
        out.frames.push_back({t - tick, obs_at(tick), raw < 0});
      }
      break;
    }
    case ModeKind::bpp: {
      if (!keyframes) throw UsageError("assemble_context: bpp mode needs keyframe annotations");
      const int lat = latency_ticks >= 0 ? latency_ticks : mode.latency_train_ticks;
      keyframe::KeyframeSet avail = keyframe::available_at(*keyframes, t, lat);
      const int n = static_cast<int>(avail.ticks.size());
      const int keep = std::min(n, mode.max_keyframes);
      for (int i = n - keep; i < n; ++i) {
        const int tick = avail.ticks[i];
        out.frames.push_back({t - tick, obs_at(tick), false});
      }
      for (int i = keep; i < mode.max_keyframes; ++i) out.frames.push_back({0, {}, true});
      break;
    }
  }
  return out;
}
}  // namespace

PolicyInput assemble_context(const std::vector<std::vector<double>>& obs_by_tick,
                             const ConditioningMode& mode,
                             const keyframe::KeyframeSet* keyframes, int t,
                             const std::vector<double>* privileged, int latency_ticks) {
  if (t < 0 || t >= static_cast<int>(obs_by_tick.size()))
    throw UsageError("assemble_context: t outside the observation buffer");
  return assemble_impl([&](int tick) -> const std::vector<double>& { return obs_by_tick[tick]; },
                       mode, keyframes, t, privileged, latency_ticks);
}

PolicyInput assemble_context(const expert::Trajectory& traj, const env::EnvSpec& spec,
                             const ConditioningMode& mode,
                             const keyframe::KeyframeSet* keyframes, int t,
                             int latency_ticks) {
  if (t < 0 || t >= traj.length())
    throw UsageError("assemble_context: t outside the trajectory");
  std::vector<double> priv;
  const std::vector<double>* priv_ptr = nullptr;
  if (mode.kind == ModeKind::oracle) {
    priv = env::privileged_encoding(spec, traj.ticks[t].latent);
    priv_ptr = &priv;
  }
  return assemble_impl(
      [&](int tick) -> const std::vector<double>& { return traj.ticks[tick].obs; }, mode,
      keyframes, t, priv_ptr, latency_ticks);
}

void ArchConfig::validate() const {
  if (enc_width <= 0 || width <= 0 || layers <= 0 || heads <= 0)
    throw ConfigError("ArchConfig: widths, layers and heads must be positive");
  if (enc_depth != 1 && enc_depth != 2) throw ConfigError("ArchConfig.enc_depth must be 1 or 2");
  if (width % heads != 0) throw ConfigError("ArchConfig.width must divide by heads");
  if (chunk_len <= 0) throw ConfigError("ArchConfig.chunk_len must be positive");
  if (action_dim <= 0) throw ConfigError("ArchConfig.action_dim must be positive");
  if (diff_train_steps <= 0) throw ConfigError("ArchConfig.diff_train_steps must be positive");
  if (diff_sample_steps <= 0 || diff_sample_steps > diff_train_steps)
    throw ConfigError("ArchConfig.diff_sample_steps must lie in [1, diff_train_steps]");
  if (noise_schedule != "cosine") throw ConfigError("ArchConfig.noise_schedule: unknown id");
  if (dropout < 0 || dropout >= 1) throw ConfigError("ArchConfig.dropout must lie in [0,1)");
}

nlohmann::json ArchConfig::to_json() const {
  return {{"enc_width", enc_width},   {"enc_depth", enc_depth},
          {"width", width},           {"layers", layers},
          {"heads", heads},           {"dropout", dropout},
          {"chunk_len", chunk_len},   {"action_dim", action_dim},
          {"diff_train_steps", diff_train_steps},
          {"diff_sample_steps", diff_sample_steps},
          {"noise_schedule", noise_schedule}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.enc_width = j.at("enc_width").get<int>();
  a.enc_depth = j.at("enc_depth").get<int>();
  a.width = j.at("width").get<int>();
  a.layers = j.at("layers").get<int>();
  a.heads = j.at("heads").get<int>();
  a.dropout = j.at("dropout").get<double>();
  a.chunk_len = j.at("chunk_len").get<int>();
  a.action_dim = j.at("action_dim").get<int>();
  a.diff_train_steps = j.at("diff_train_steps").get<int>();
  a.diff_sample_steps = j.at("diff_sample_steps").get<int>();
  a.noise_schedule = j.at("noise_schedule").get<std::string>();
  a.validate();
  return a;
}

Normalizer Normalizer::fit(const std::vector<const std::vector<double>*>& rows, int dim) {
  Normalizer n;
  n.mu.assign(dim, 0.0);
  n.sd.assign(dim, 1.0);
  if (rows.empty()) return n;
  for (const auto* r : rows)
    for (int d = 0; d < dim; ++d) n.mu[d] += (*r)[d];
  for (int d = 0; d < dim; ++d) n.mu[d] /= rows.size();
  std::vector<double> var(dim, 0.0);
  for (const auto* r : rows)
    for (int d = 0; d < dim; ++d) {
      const double e = (*r)[d] - n.mu[d];
      var[d] += e * e;
    }
  for (int d = 0; d < dim; ++d) {
    const double sd = std::sqrt(var[d] / rows.size());
    n.sd[d] = sd < 1e-8 ? 1.0 : sd;
  }
  return n;
}

Normalizer Normalizer::identity(int dim) {
  Normalizer n;
  n.mu.assign(dim, 0.0);
  n.sd.assign(dim, 1.0);
  return n;
}

std::vector<double> Normalizer::normalize(const std::vector<double>& x) const {
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mu[i]) / sd[i];
  return y;
}

std::vector<double> Normalizer::denormalize(const std::vector<double>& x) const {
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sd[i] + mu[i];
  return y;
}

DiffusionSchedule DiffusionSchedule::make(const std::string& id, int steps) {
  if (id != "cosine") throw ConfigError("DiffusionSchedule: unknown schedule id " + id);
  DiffusionSchedule s;
  const double off = 0.008;
  auto f = [&](double u) {
    const double v = std::cos((u / steps + off) / (1.0 + off) * M_PI / 2.0);
    return v * v;
  };
  const double f0 = f(0.0);
  double prev = 1.0;
  for (int i = 0; i < steps; ++i) {
    double ab = f(static_cast<double>(i + 1)) / f0;
    double beta = 1.0 - ab / prev;
    beta = std::clamp(beta, 1e-8, 0.999);
    ab = prev * (1.0 - beta);
    s.alpha_bar.push_back(ab);
    s.beta.push_back(beta);
    prev = ab;
  }
  return s;
}

int ParamStore::add(const std::string& name, Mat m) {
  names.push_back(name);
  values.push_back(std::move(m));
  return static_cast<int>(values.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

size_t ParamStore::total_scalars() const {
  size_t n = 0;
  for (const auto& m : values) n += m.size();
  return n;
}

namespace {
Mat init_mat(Rng& rng, int rows, int cols, double std) {
  Mat m(rows, cols);
  for (auto& v : m.a) v = rng.normal(0, std);
  return m;
}

Mat ones_row(int cols) {
  Mat m(1, cols);
  std::fill(m.a.begin(), m.a.end(), 1.0);
  return m;
}
}  // namespace

PolicyNet::PolicyNet(const ArchConfig& arch, const ConditioningMode& mode, int obs_dim,
                     int priv_dim, bool ptp_head, bool gt_head, int gt_classes,
                     uint64_t init_seed)
    : arch_(arch),
      mode_(mode),
      obs_dim_(obs_dim),
      priv_dim_(priv_dim),
      ptp_head_(ptp_head),
      gt_head_(gt_head),
      gt_classes_(gt_classes),
      schedule_(DiffusionSchedule::make(arch.noise_schedule, arch.diff_train_steps)) {
  arch_.validate();
  const int W = arch_.width;
  const int D = arch_.chunk_len * arch_.action_dim;
  Rng rng(derive_seed(init_seed, 0x1417));

  auto he = [](int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

  if (arch_.enc_depth == 2) {
    p_enc_w0_ = params_.add("enc.w0", init_mat(rng, obs_dim, arch_.enc_width, he(obs_dim)));
    p_enc_b0_ = params_.add("enc.b0", Mat(1, arch_.enc_width));
    p_enc_w1_ = params_.add("enc.w1", init_mat(rng, arch_.enc_width, W, he(arch_.enc_width)));
    p_enc_b1_ = params_.add("enc.b1", Mat(1, W));
    enc_param_idx_ = {p_enc_w0_, p_enc_b0_, p_enc_w1_, p_enc_b1_};
  } else {
    p_enc_w0_ = params_.add("enc.w0", init_mat(rng, obs_dim, W, he(obs_dim)));
    p_enc_b0_ = params_.add("enc.b0", Mat(1, W));
    enc_param_idx_ = {p_enc_w0_, p_enc_b0_};
  }

  p_pos_ = params_.add("pos", init_mat(rng, seq_len(), W, 0.02));
  p_step_ = params_.add("step_emb", init_mat(rng, arch_.diff_train_steps, W, 0.02));
  p_act_w_ = params_.add("act_in.w", init_mat(rng, D, W, he(D)));
  p_act_b_ = params_.add("act_in.b", Mat(1, W));
  if (mode_.kind == ModeKind::oracle) {
    p_priv_w_ = params_.add("priv.w", init_mat(rng, priv_dim, W, he(priv_dim)));
    p_priv_b_ = params_.add("priv.b", Mat(1, W));
  }

  for (int l = 0; l < arch_.layers; ++l) {
    const std::string p = "blk" + std::to_string(l) + ".";
    BlockIdx b;
    b.ln1g = params_.add(p + "ln1.g", ones_row(W));
    b.ln1b = params_.add(p + "ln1.b", Mat(1, W));
    b.wq = params_.add(p + "wq", init_mat(rng, W, W, he(W)));
    b.bq = params_.add(p + "bq", Mat(1, W));
    b.wk = params_.add(p + "wk", init_mat(rng, W, W, he(W)));
    b.bk = params_.add(p + "bk", Mat(1, W));
    b.wv = params_.add(p + "wv", init_mat(rng, W, W, he(W)));
    b.bv = params_.add(p + "bv", Mat(1, W));
    b.wo = params_.add(p + "wo", init_mat(rng, W, W, he(W)));
    b.bo = params_.add(p + "bo", Mat(1, W));
    b.ln2g = params_.add(p + "ln2.g", ones_row(W));
    b.ln2b = params_.add(p + "ln2.b", Mat(1, W));
    b.mw0 = params_.add(p + "mlp.w0", init_mat(rng, W, 4 * W, he(W)));
    b.mb0 = params_.add(p + "mlp.b0", Mat(1, 4 * W));
    b.mw1 = params_.add(p + "mlp.w1", init_mat(rng, 4 * W, W, he(4 * W)));
    b.mb1 = params_.add(p + "mlp.b1", Mat(1, W));
    blocks_.push_back(b);
  }

  p_lnf_g_ = params_.add("lnf.g", ones_row(W));
  p_lnf_b_ = params_.add("lnf.b", Mat(1, W));
  // zero init: an untrained head predicts zero noise
  p_head_w_ = params_.add("head.w", Mat(W, D));
  p_head_b_ = params_.add("head.b", Mat(1, D));

  if (ptp_head_) {
    p_ptp_w_ = params_.add("ptp_head.w", init_mat(rng, W, arch_.action_dim, he(W)));
    p_ptp_b_ = params_.add("ptp_head.b", Mat(1, arch_.action_dim));
  }
  if (gt_head_) {
    p_gt_w_ = params_.add("gt_head.w", init_mat(rng, W, gt_classes, he(W)));
    p_gt_b_ = params_.add("gt_head.b", Mat(1, gt_classes));
  }
}

int PolicyNet::seq_len() const {
  return 3 + mode_.context_slots() + (mode_.kind == ModeKind::oracle ? 1 : 0);
}

void PolicyNet::validate_input(const PolicyInput& in) const {
  if (static_cast<int>(in.current_obs.size()) != obs_dim_)
    throw UsageError("PolicyNet: observation dim mismatch");
  if (static_cast<int>(in.frames.size()) != mode_.context_slots())
    throw UsageError("PolicyNet: context slot count mismatch for this mode");
  if (mode_.kind == ModeKind::oracle && static_cast<int>(in.privileged.size()) != priv_dim_)
    throw UsageError("PolicyNet: privileged dim mismatch");
}

ForwardNodes PolicyNet::build_forward(nn::Tape& tape, const std::vector<PolicyInput>& batch,
                                      const Mat& noised_chunks, const std::vector<int>& steps,
                                      bool train_mode, uint64_t dropout_seed) const {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw UsageError("PolicyNet: empty batch");
  const int S_ctx = mode_.context_slots();
  const int S = seq_len();
  const int W = arch_.width;
  const bool oracle = mode_.kind == ModeKind::oracle;

  ForwardNodes out;
  for (size_t i = 0; i < params_.count(); ++i)
    out.param_leaf.push_back(tape.leaf(params_.values[i]));

  // frame stack: current + context per element, observations normalized,
  // pads zero in normalized space
  Mat frames(B * (1 + S_ctx), obs_dim_);
  Mat priv(B, std::max(priv_dim_, 1));
  std::vector<uint8_t> key_pad(static_cast<size_t>(B) * S, 0);
  for (int b = 0; b < B; ++b) {
    validate_input(batch[b]);
    const auto cur = obs_norm.normalize(batch[b].current_obs);
    std::copy(cur.begin(), cur.end(), frames.row(b * (1 + S_ctx)));
    for (int j = 0; j < S_ctx; ++j) {
      const auto& fr = batch[b].frames[j];
      if (fr.pad) {
        key_pad[static_cast<size_t>(b) * S + 3 + j] = 1;
      } else {
        const auto v = obs_norm.normalize(fr.obs);
        std::copy(v.begin(), v.end(), frames.row(b * (1 + S_ctx) + 1 + j));
      }
    }
    if (oracle)
      for (int d = 0; d < priv_dim_; ++d) priv.at(b, d) = batch[b].privileged[d];
  }

  auto P = [&](int idx) { return out.param_leaf[idx]; };

  int enc = tape.leaf(std::move(frames));
  enc = tape.add_rowvec(tape.matmul(enc, P(p_enc_w0_)), P(p_enc_b0_));
  if (arch_.enc_depth == 2) {
    enc = tape.silu(enc);
    enc = tape.add_rowvec(tape.matmul(enc, P(p_enc_w1_)), P(p_enc_b1_));
  }

  int act_tok = tape.add_rowvec(tape.matmul(tape.leaf(noised_chunks), P(p_act_w_)), P(p_act_b_));
  int step_tok = tape.gather_rows(P(p_step_), steps);
  int priv_tok = -1;
  if (oracle)
    priv_tok = tape.add_rowvec(tape.matmul(tape.leaf(std::move(priv)), P(p_priv_w_)), P(p_priv_b_));

  std::vector<int> step_dst(B), act_dst(B), priv_dst(oracle ? B : 0);
  std::vector<int> frame_dst(B * (1 + S_ctx));
  for (int b = 0; b < B; ++b) {
    step_dst[b] = b * S + 0;
    act_dst[b] = b * S + 1;
    frame_dst[b * (1 + S_ctx)] = b * S + 2;
    for (int j = 0; j < S_ctx; ++j) frame_dst[b * (1 + S_ctx) + 1 + j] = b * S + 3 + j;
    if (oracle) priv_dst[b] = b * S + 3 + S_ctx;
  }
  std::vector<std::pair<int, std::vector<int>>> parts = {
      {step_tok, step_dst}, {act_tok, act_dst}, {enc, frame_dst}};
  if (oracle) parts.push_back({priv_tok, priv_dst});
  int x = tape.compose_rows(B * S, W, parts);
  x = tape.add_tiled_rows(x, P(p_pos_), B);

  nn::AttentionDims dims{B, S, arch_.heads, W};
  const double drop = train_mode ? arch_.dropout : 0.0;
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const auto& blk = blocks_[l];
    int a = tape.layernorm(x, P(blk.ln1g), P(blk.ln1b));
    int q = tape.add_rowvec(tape.matmul(a, P(blk.wq)), P(blk.bq));
    int k = tape.add_rowvec(tape.matmul(a, P(blk.wk)), P(blk.bk));
    int v = tape.add_rowvec(tape.matmul(a, P(blk.wv)), P(blk.bv));
    int att = tape.attention(q, k, v, dims, key_pad);
    att = tape.add_rowvec(tape.matmul(att, P(blk.wo)), P(blk.bo));
    att = tape.dropout(att, drop, derive_seed(dropout_seed, 2 * l));
    x = tape.add(x, att);
    int m = tape.layernorm(x, P(blk.ln2g), P(blk.ln2b));
    m = tape.add_rowvec(tape.matmul(m, P(blk.mw0)), P(blk.mb0));
    m = tape.silu(m);
    m = tape.add_rowvec(tape.matmul(m, P(blk.mw1)), P(blk.mb1));
    m = tape.dropout(m, drop, derive_seed(dropout_seed, 2 * l + 1));
    x = tape.add(x, m);
  }
  int f = tape.layernorm(x, P(p_lnf_g_), P(p_lnf_b_));
  out.final_feat = f;

  out.eps_pred = tape.add_rowvec(tape.matmul(tape.gather_rows(f, act_dst), P(p_head_w_)),
                                 P(p_head_b_));

  std::vector<std::vector<int>> groups(B);
  for (int b = 0; b < B; ++b) {
    groups[b].push_back(b * S + 2);
    for (int j = 0; j < S_ctx; ++j) {
      const int row = b * S + 3 + j;
      if (!key_pad[row]) {
        groups[b].push_back(row);
        out.ctx_rows.push_back(row);
        out.ctx_owner.push_back({b, j});
      }
    }
    if (oracle) groups[b].push_back(b * S + 3 + S_ctx);
  }
  out.pooled = tape.group_mean_rows(f, std::move(groups));
  return out;
}

int PolicyNet::apply_ptp_head(nn::Tape& tape, const ForwardNodes& f) const {
  if (!ptp_head_) throw UsageError("PolicyNet: ptp head absent");
  int feat = tape.gather_rows(f.final_feat, f.ctx_rows);
  return tape.add_rowvec(tape.matmul(feat, f.param_leaf[p_ptp_w_]), f.param_leaf[p_ptp_b_]);
}

int PolicyNet::apply_gt_head(nn::Tape& tape, const ForwardNodes& f) const {
  if (!gt_head_) throw UsageError("PolicyNet: gt head absent");
  return tape.add_rowvec(tape.matmul(f.pooled, f.param_leaf[p_gt_w_]), f.param_leaf[p_gt_b_]);
}

std::vector<double> PolicyNet::normalize_chunk(const std::vector<double>& chunk) const {
  std::vector<double> y(chunk.size());
  const int ad = arch_.action_dim;
  for (size_t i = 0; i < chunk.size(); ++i) {
    const int d = static_cast<int>(i % ad);
    y[i] = (chunk[i] - act_norm.mu[d]) / act_norm.sd[d];
  }
  return y;
}

std::vector<double> PolicyNet::denormalize_chunk(const std::vector<double>& chunk) const {
  std::vector<double> y(chunk.size());
  const int ad = arch_.action_dim;
  for (size_t i = 0; i < chunk.size(); ++i) {
    const int d = static_cast<int>(i % ad);
    y[i] = chunk[i] * act_norm.sd[d] + act_norm.mu[d];
  }
  return y;
}

void build_ddpm_loss(const PolicyNet& net, const std::vector<BatchSample>& batch,
                     uint64_t noise_seed, bool train_mode, DdpmGraph& out) {
  if (batch.empty()) throw UsageError("ddpm_loss: empty batch");
  const int B = static_cast<int>(batch.size());
  const int D = net.arch().chunk_len * net.arch().action_dim;
  const auto& sched = net.schedule();

  Rng rng(derive_seed(noise_seed, 0xdd1f));
  Mat noised(B, D), eps(B, D);
  std::vector<int> steps(B);
  std::vector<PolicyInput> inputs;
  inputs.reserve(B);
  for (int b = 0; b < B; ++b) {
    if (static_cast<int>(batch[b].chunk_norm.size()) != D)
      throw UsageError("ddpm_loss: chunk size mismatch");
    steps[b] = static_cast<int>(rng.bounded(sched.alpha_bar.size()));
    const double ab = sched.alpha_bar[steps[b]];
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    for (int d = 0; d < D; ++d) {
      const double e = rng.normal();
      eps.at(b, d) = e;
      noised.at(b, d) = sa * batch[b].chunk_norm[d] + sn * e;
    }
    inputs.push_back(batch[b].input);
  }

  out.nodes = net.build_forward(out.tape, inputs, noised, steps, train_mode,
                                derive_seed(noise_seed, 0xd309));
  out.loss = out.tape.mse(out.nodes.eps_pred, eps);
  const double v = out.tape.scalar(out.loss);
  if (!std::isfinite(v))
    throw TrainingError("ddpm_loss: non-finite loss on a batch of " + std::to_string(B) +
                        " (first step index " + std::to_string(steps[0]) + ")");
}

double ddpm_loss(const PolicyNet& net, const std::vector<BatchSample>& batch,
                 uint64_t noise_seed) {
  DdpmGraph g;
  build_ddpm_loss(net, batch, noise_seed, false, g);
  return g.tape.scalar(g.loss);
}

std::vector<double> sample_chunk(const PolicyNet& net, const PolicyInput& input,
                                 uint64_t seed) {
  const int D = net.arch().chunk_len * net.arch().action_dim;
  const int T = net.arch().diff_train_steps;
  const int S = net.arch().diff_sample_steps;
  const auto& sched = net.schedule();

  std::vector<int> taus(S);
  if (S == 1) {
    taus[0] = T - 1;
  } else {
    for (int j = 0; j < S; ++j)
      taus[j] = static_cast<int>((static_cast<long long>(j) * (T - 1)) / (S - 1));
  }

  Rng rng(derive_seed(seed, 0x5a3e));
  std::vector<double> x(D);
  for (auto& v : x) v = rng.normal();

  // posterior over the clipped denoised estimate; the clip keeps the
  // prediction-error amplification at near-total noise levels bounded
  constexpr double kDenoisedClip = 8.0;
  std::vector<PolicyInput> batch{input};
  for (int j = S - 1; j >= 0; --j) {
    Mat noised(1, D);
    for (int d = 0; d < D; ++d) noised.at(0, d) = x[d];
    nn::Tape tape;
    const auto nodes = net.build_forward(tape, batch, noised, {taus[j]}, false, 0);
    const Mat& ep = tape.val(nodes.eps_pred);

    const double ab = sched.alpha_bar[taus[j]];
    const double ab_prev = j > 0 ? sched.alpha_bar[taus[j - 1]] : 1.0;
    const double beta_eff = std::clamp(1.0 - ab / ab_prev, 1e-12, 0.9999);
    const double alpha_eff = 1.0 - beta_eff;
    const double c0 = std::sqrt(ab_prev) * beta_eff / (1.0 - ab);
    const double cx = std::sqrt(alpha_eff) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = std::sqrt(beta_eff * (1.0 - ab_prev) / (1.0 - ab));
    for (int d = 0; d < D; ++d) {
      double x0 = (x[d] - std::sqrt(1.0 - ab) * ep.at(0, d)) / std::sqrt(ab);
      x0 = std::clamp(x0, -kDenoisedClip, kDenoisedClip);
      double mu = c0 * x0 + cx * x[d];
      if (j > 0) mu += sigma * rng.normal();
      x[d] = mu;
      if (!std::isfinite(x[d]))
        throw SamplingError("sample_chunk: non-finite value at reverse step " +
                            std::to_string(j));
    }
  }
  return net.denormalize_chunk(x);
}

namespace {
nlohmann::json norm_to_json(const Normalizer& n) {
  return {{"mu", n.mu}, {"sd", n.sd}};
}
Normalizer norm_from_json(const nlohmann::json& j) {
  Normalizer n;
  n.mu = j.at("mu").get<std::vector<double>>();
  n.sd = j.at("sd").get<std::vector<double>>();
  return n;
}
}  // namespace

std::string Checkpoint::canonical_json() const {
  nlohmann::json params_j = nlohmann::json::array();
  for (size_t i = 0; i < params.count(); ++i)
    params_j.push_back({{"n", params.names[i]},
                        {"r", params.values[i].rows},
                        {"c", params.values[i].cols},
                        {"v", params.values[i].a}});
  nlohmann::json j{{"format_version", format_version},
                   {"kind", "kflab_checkpoint"},
                   {"spec", spec.to_json()},
                   {"arch", arch.to_json()},
                   {"mode", mode.to_json()},
                   {"ptp_head", ptp_head},
                   {"gt_head", gt_head},
                   {"obs_norm", norm_to_json(obs_norm)},
                   {"act_norm", norm_to_json(act_norm)},
                   {"train_config_digest", train_config_digest},
                   {"seed", seed},
                   {"params", params_j}};
  return j.dump();
}

std::string Checkpoint::digest() const { return digest_of(canonical_json()); }

void Checkpoint::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("Checkpoint::save: cannot open " + path);
  f << canonical_json() << "\n";
  if (!f) throw Error("Checkpoint::save: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("Checkpoint::load: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("Checkpoint::load: ") + e.what());
  }
  Checkpoint c;
  c.format_version = j.at("format_version").get<int>();
  if (c.format_version != 1)
    throw UnsupportedVersionError("Checkpoint::load: unsupported format_version " +
                                  std::to_string(c.format_version));
  c.spec = env::EnvSpec::from_json(j.at("spec"));
  c.arch = ArchConfig::from_json(j.at("arch"));
  c.mode = ConditioningMode::from_json(j.at("mode"));
  c.ptp_head = j.at("ptp_head").get<bool>();
  c.gt_head = j.at("gt_head").get<bool>();
  c.obs_norm = norm_from_json(j.at("obs_norm"));
  c.act_norm = norm_from_json(j.at("act_norm"));
  c.train_config_digest = j.at("train_config_digest").get<std::string>();
  c.seed = j.at("seed").get<uint64_t>();
  for (const auto& p : j.at("params")) {
    Mat m(p.at("r").get<int>(), p.at("c").get<int>());
    m.a = p.at("v").get<std::vector<double>>();
    if (m.a.size() != static_cast<size_t>(m.rows) * m.cols)
      throw IntegrityError("Checkpoint::load: parameter size mismatch for " +
                           p.at("n").get<std::string>());
    c.params.add(p.at("n").get<std::string>(), std::move(m));
  }
  return c;
}

PolicyNet Checkpoint::instantiate() const {
  PolicyNet net(arch, mode, spec.obs_dim(), spec.progress_classes(), ptp_head, gt_head,
                spec.progress_classes(), seed);
  if (net.params().count() != params.count())
    throw IntegrityError("Checkpoint: parameter count mismatch on instantiate");
  for (size_t i = 0; i < params.count(); ++i) {
    const int idx = net.params().find(params.names[i]);
    if (idx < 0 || !net.params().values[idx].same_shape(params.values[i]))
      throw IntegrityError("Checkpoint: parameter mismatch for " + params.names[i]);
    net.params().values[idx] = params.values[i];
  }
  net.obs_norm = obs_norm;
  net.act_norm = act_norm;
  return net;
}

Checkpoint make_checkpoint(const PolicyNet& net, const env::EnvSpec& spec,
                           const std::string& train_digest, uint64_t seed) {
  Checkpoint c;
  c.spec = spec;
  c.arch = net.arch();
  c.mode = net.mode();
  c.ptp_head = net.has_ptp_head();
  c.gt_head = net.has_gt_head();
  c.obs_norm = net.obs_norm;
  c.act_norm = net.act_norm;
  c.train_config_digest = train_digest;
  c.seed = seed;
  c.params = net.params();
  return c;
}

}  // namespace kflab::policy
