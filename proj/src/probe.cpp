#include "kflab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "kflab/errors.hpp"
#include "kflab/rng.hpp"

namespace kflab::probe {

int LinearProbe::predict(const double* feat, int dim) const {
  int best = 0;
  double bv = -1e300;
  for (int c = 0; c < w.cols; ++c) {
    double s = b[c];
    for (int d = 0; d < dim; ++d) s += feat[d] * w.at(d, c);
    if (s > bv) {
      bv = s;
      best = c;
    }
  }
  return best;
}

Mat extract_features(const policy::Checkpoint& ckpt,
                     const std::vector<policy::PolicyInput>& inputs) {
  policy::PolicyNet net = ckpt.instantiate();
  const int D = net.arch().chunk_len * net.arch().action_dim;
  const int W = net.arch().width;
  Mat out(static_cast<int>(inputs.size()), W);

  constexpr size_t kBatch = 64;
  for (size_t start = 0; start < inputs.size(); start += kBatch) {
    const size_t end = std::min(inputs.size(), start + kBatch);
    std::vector<policy::PolicyInput> batch(inputs.begin() + start, inputs.begin() + end);
    Mat zeros(static_cast<int>(batch.size()), D);
    std::vector<int> steps(batch.size(), 0);
    nn::Tape tape;
    const auto nodes = net.build_forward(tape, batch, zeros, steps, false, 0);
    const Mat& pooled = tape.val(nodes.pooled);
    for (size_t r = 0; r < batch.size(); ++r)
      std::copy(pooled.row(static_cast<int>(r)), pooled.row(static_cast<int>(r)) + W,
                out.row(static_cast<int>(start + r)));
  }
  return out;
}

LinearProbe fit_probe(const Mat& features, const std::vector<int>& labels, uint64_t seed) {
  (void)seed;  // fitting is deterministic: zero init, full-batch descent
  if (features.rows != static_cast<int>(labels.size()))
    throw UsageError("fit_probe: feature/label count mismatch");
  int classes = 0;
  for (int l : labels) classes = std::max(classes, l + 1);
  std::vector<int> present(classes, 0);
  for (int l : labels) present[l] = 1;
  int distinct = 0;
  for (int p : present) distinct += p;
  if (distinct < 2) throw UsageError("fit_probe: need at least two classes");

  const int N = features.rows, F = features.cols, C = classes;
  LinearProbe p;
  p.w = Mat(F, C);
  p.b.assign(C, 0.0);

  constexpr int kIters = 2000;
  constexpr double kLr = 0.5;
  constexpr double kL2 = 1e-4;

  std::vector<double> logits(static_cast<size_t>(N) * C);
  Mat gw(F, C);
  std::vector<double> gb(C);
  for (int it = 0; it < kIters; ++it) {
    for (int i = 0; i < N; ++i) {
      double mx = -1e300;
      for (int c = 0; c < C; ++c) {
        double s = p.b[c];
        const double* f = features.row(i);
        for (int d = 0; d < F; ++d) s += f[d] * p.w.at(d, c);
        logits[static_cast<size_t>(i) * C + c] = s;
        mx = std::max(mx, s);
      }
      double z = 0;
      for (int c = 0; c < C; ++c) {
        double& s = logits[static_cast<size_t>(i) * C + c];
        s = std::exp(s - mx);
        z += s;
      }
      for (int c = 0; c < C; ++c) logits[static_cast<size_t>(i) * C + c] /= z;
    }
    gw.zero();
    std::fill(gb.begin(), gb.end(), 0.0);
    for (int i = 0; i < N; ++i) {
      const double* f = features.row(i);
      for (int c = 0; c < C; ++c) {
        const double diff =
            logits[static_cast<size_t>(i) * C + c] - (labels[i] == c ? 1.0 : 0.0);
        gb[c] += diff;
        for (int d = 0; d < F; ++d) gw.at(d, c) += diff * f[d];
      }
    }
    const double inv_n = 1.0 / N;
    for (int c = 0; c < C; ++c) p.b[c] -= kLr * gb[c] * inv_n;
    for (int d = 0; d < F; ++d)
      for (int c = 0; c < C; ++c)
        p.w.at(d, c) -= kLr * (gw.at(d, c) * inv_n + kL2 * p.w.at(d, c));
  }
  return p;
}

double probe_accuracy(const LinearProbe& p, const Mat& features,
                      const std::vector<int>& labels) {
  if (features.rows == 0) return 0.0;
  int hit = 0;
  for (int i = 0; i < features.rows; ++i)
    if (p.predict(features.row(i), features.cols) == labels[i]) ++hit;
  return static_cast<double>(hit) / features.rows;
}

namespace {

struct SampleSet {
  std::vector<policy::PolicyInput> inputs;
  std::vector<int> labels;
};

// Query-tick samples from stored trajectories (expert or rollout).
void collect_from_traj(const expert::Trajectory& traj, const env::EnvSpec& spec,
                       const policy::ConditioningMode& mode,
                       const keyframe::KeyframeSet* kf, int period, int latency,
                       SampleSet& out) {
  const int last = traj.action_ticks() - 1;
  for (int q = 0; q <= last; q += period) {
    out.inputs.push_back(policy::assemble_context(traj, spec, mode, kf, q, latency));
    out.labels.push_back(env::progress_class(spec, traj.ticks[q].latent));
  }
}

SampleSet balance(const SampleSet& in, uint64_t seed) {
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < in.labels.size(); ++i) by_class[in.labels[i]].push_back(i);
  size_t m = SIZE_MAX;
  for (const auto& [c, idx] : by_class) m = std::min(m, idx.size());
  if (by_class.empty()) return {};

  Rng rng(derive_seed(seed, 0xba1a));
  std::vector<size_t> chosen;
  for (auto& [c, idx] : by_class) {
    std::vector<size_t> v = idx;
    rng.shuffle(v);
    chosen.insert(chosen.end(), v.begin(), v.begin() + m);
  }
  std::sort(chosen.begin(), chosen.end());
  SampleSet out;
  for (size_t i : chosen) {
    out.inputs.push_back(in.inputs[i]);
    out.labels.push_back(in.labels[i]);
  }
  return out;
}

std::vector<int> class_counts(const std::vector<int>& labels, int classes) {
  std::vector<int> c(classes, 0);
  for (int l : labels)
    if (l >= 0 && l < classes) ++c[l];
  return c;
}

}  // namespace

ProbeReport probe_report(const policy::Checkpoint& ckpt, const expert::DemoDataset& ds,
                         const keyframe::Annotations* ann,
                         const std::vector<size_t>& fit_traj_idx,
                         const std::vector<size_t>& val_traj_idx,
                         const std::vector<rollout::RolloutResult>& rollouts,
                         const keyframe::DetectorConfig* det_cfg, uint64_t seed) {
  if (rollouts.empty()) throw UsageError("probe_report: empty rollout set");
  const env::EnvSpec& spec = ckpt.spec;
  const auto& mode = ckpt.mode;
  const int period = det_cfg ? det_cfg->query_period_ticks : 10;
  const int latency = det_cfg ? det_cfg->latency_ticks : mode.latency_train_ticks;
  const bool needs_kf = mode.kind == policy::ModeKind::bpp;
  if (needs_kf && !ann) throw UsageError("probe_report: bpp checkpoint needs annotations");

  SampleSet fit_raw, val_raw, roll_raw;
  for (size_t ti : fit_traj_idx)
    collect_from_traj(ds.trajs[ti], spec, mode, needs_kf ? &ann->per_traj[ti] : nullptr,
                      period, mode.latency_train_ticks, fit_raw);
  for (size_t ti : val_traj_idx)
    collect_from_traj(ds.trajs[ti], spec, mode, needs_kf ? &ann->per_traj[ti] : nullptr,
                      period, mode.latency_train_ticks, val_raw);
  for (const auto& r : rollouts) {
    keyframe::KeyframeSet edges;
    if (needs_kf) {
      edges = keyframe::rising_edges(r.detections);
      edges.source = det_cfg ? det_cfg->digest() : "";
    }
    collect_from_traj(r.traj, spec, mode, needs_kf ? &edges : nullptr, period, latency,
                      roll_raw);
  }

  SampleSet fit_set = balance(fit_raw, derive_seed(seed, 1));
  SampleSet val_set = balance(val_raw, derive_seed(seed, 2));
  SampleSet roll_set = balance(roll_raw, derive_seed(seed, 3));
  if (fit_set.inputs.empty()) throw UsageError("probe_report: empty probe-fit set");
  if (val_set.inputs.empty()) throw UsageError("probe_report: empty expert-val set");

  const Mat fit_feat = extract_features(ckpt, fit_set.inputs);
  const LinearProbe p = fit_probe(fit_feat, fit_set.labels, seed);

  ProbeReport rep;
  rep.task = env::task_name(spec.task_id);
  rep.checkpoint_digest = ckpt.digest();
  rep.probe_seed = seed;
  rep.iid_accuracy = probe_accuracy(p, extract_features(ckpt, val_set.inputs), val_set.labels);
  rep.rollout_accuracy =
      probe_accuracy(p, extract_features(ckpt, roll_set.inputs), roll_set.labels);
  rep.class_counts_iid = class_counts(val_set.labels, spec.progress_classes());
  rep.class_counts_rollout = class_counts(roll_set.labels, spec.progress_classes());
  return rep;
}

}  // namespace kflab::probe
