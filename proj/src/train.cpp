#include "kflab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "kflab/digest.hpp"
#include "kflab/errors.hpp"
#include "kflab/rng.hpp"

namespace kflab::train {

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"adam_eps", adam_eps},
          {"grad_clip", grad_clip},
          {"val_fraction", val_fraction},
          {"val_every", val_every},
          {"curve_every", curve_every},
          {"frozen_encoder", frozen_encoder},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j.at("steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1").get<double>();
  if (j.contains("adam_beta2")) c.adam_beta2 = j.at("adam_beta2").get<double>();
  if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
  if (j.contains("grad_clip")) c.grad_clip = j.at("grad_clip").get<double>();
  if (j.contains("val_fraction")) c.val_fraction = j.at("val_fraction").get<double>();
  if (j.contains("val_every")) c.val_every = j.at("val_every").get<int>();
  if (j.contains("curve_every")) c.curve_every = j.at("curve_every").get<int>();
  if (j.contains("frozen_encoder")) c.frozen_encoder = j.at("frozen_encoder").get<bool>();
  if (j.contains("seed")) c.seed = j.at("seed").get<uint64_t>();
  return c;
}

policy::BatchSample make_sample(const expert::Trajectory& traj, const env::EnvSpec& spec,
                                const policy::ConditioningMode& mode,
                                const policy::ArchConfig& arch,
                                const keyframe::KeyframeSet* kf, int t,
                                const policy::PolicyNet& net) {
  policy::BatchSample s;
  s.input = policy::assemble_context(traj, spec, mode, kf, t);

  const int last_action = traj.action_ticks() - 1;
  std::vector<double> chunk;
  chunk.reserve(static_cast<size_t>(arch.chunk_len) * arch.action_dim);
  for (int i = 0; i < arch.chunk_len; ++i) {
    const int idx = std::min(t + i, last_action);
    const auto& a = traj.ticks[idx].action;
    chunk.insert(chunk.end(), a.begin(), a.end());
  }
  s.chunk_norm = net.normalize_chunk(chunk);

  s.past_actions.resize(s.input.frames.size());
  if (mode.kind == policy::ModeKind::naive_history) {
    for (size_t j = 0; j < s.input.frames.size(); ++j) {
      if (s.input.frames[j].pad) continue;
      const int ft = t - s.input.frames[j].tick_offset;
      const int idx = std::min(ft, last_action);
      s.past_actions[j] = net.normalize_chunk(traj.ticks[idx].action);
    }
  }
  s.progress_class = env::progress_class(spec, traj.ticks[t].latent);
  return s;
}

namespace {

struct Adam {
  std::vector<Mat> m, v;
  long long t = 0;

  explicit Adam(const policy::ParamStore& p) {
    for (const auto& w : p.values) {
      m.emplace_back(w.rows, w.cols);
      v.emplace_back(w.rows, w.cols);
    }
  }

  void step(policy::ParamStore& p, const std::vector<Mat>& grads, const TrainConfig& cfg,
            const std::vector<bool>& frozen) {
    ++t;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (size_t i = 0; i < p.values.size(); ++i) {
      if (frozen[i]) continue;
      Mat& w = p.values[i];
      for (size_t k = 0; k < w.size(); ++k) {
        const double g = grads[i].a[k];
        m[i].a[k] = b1 * m[i].a[k] + (1 - b1) * g;
        v[i].a[k] = b2 * v[i].a[k] + (1 - b2) * g * g;
        const double mh = m[i].a[k] / bc1;
        const double vh = v[i].a[k] / bc2;
        w.a[k] -= cfg.lr * mh / (std::sqrt(vh) + cfg.adam_eps);
      }
    }
  }
};

double clip_global_norm(std::vector<Mat>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads)
    for (double x : g.a) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g.a) x *= s;
  }
  return norm;
}

}  // namespace

TrainResult train(const expert::DemoDataset& ds, const keyframe::Annotations* ann,
                  const policy::ConditioningMode& mode, const policy::ArchConfig& arch,
                  const regularize::AuxConfig& aux, const TrainConfig& cfg) {
  const env::EnvSpec& spec = ds.spec;
  arch.validate();
  if (ds.trajs.empty()) throw UsageError("train: empty dataset");
  if (mode.kind == policy::ModeKind::bpp) {
    if (!ann) throw UsageError("train: bpp mode requires annotations");
    if (ann->dataset_digest != ds.content_digest())
      throw IntegrityError("train: annotations do not match the dataset digest");
  }
  if (aux.ptp_enabled() && mode.kind != policy::ModeKind::naive_history)
    throw UsageError("train: ptp loss is defined for naive_history only");

  // trajectory-level split
  const size_t N = ds.trajs.size();
  std::vector<size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, 0x5917));
  split_rng.shuffle(order);
  size_t val_n = N > 1 ? std::max<size_t>(1, static_cast<size_t>(std::lround(cfg.val_fraction * N)))
                       : 0;
  if (val_n >= N) val_n = N - 1;
  TrainResult res;
  res.val_traj_idx.assign(order.begin(), order.begin() + val_n);
  res.train_traj_idx.assign(order.begin() + val_n, order.end());
  std::sort(res.val_traj_idx.begin(), res.val_traj_idx.end());
  std::sort(res.train_traj_idx.begin(), res.train_traj_idx.end());

  // normalization statistics from the training split only
  std::vector<const std::vector<double>*> obs_rows, act_rows;
  for (size_t ti : res.train_traj_idx) {
    const auto& tr = ds.trajs[ti];
    for (const auto& tick : tr.ticks) {
      obs_rows.push_back(&tick.obs);
      if (!tick.action.empty()) act_rows.push_back(&tick.action);
    }
  }

  policy::PolicyNet net(arch, mode, spec.obs_dim(), spec.progress_classes(),
                        aux.ptp_enabled(), aux.gt_enabled(), spec.progress_classes(),
                        cfg.seed);
  net.obs_norm = policy::Normalizer::fit(obs_rows, spec.obs_dim());
  net.act_norm = policy::Normalizer::fit(act_rows, arch.action_dim);

  const std::string train_digest = digest_of(nlohmann::json{{"arch", arch.to_json()},
                                                            {"mode", mode.to_json()},
                                                            {"aux", aux.to_json()},
                                                            {"train", cfg.to_json()},
                                                            {"dataset", ds.content_digest()},
                                                            {"annotations",
                                                             ann ? ann->detector_digest : ""}}
                                                 .dump());

  // sample pools
  struct Ref {
    size_t traj;
    int t;
  };
  auto build_pool = [&](const std::vector<size_t>& idx) {
    std::vector<Ref> pool;
    for (size_t ti : idx) {
      const int n = ds.trajs[ti].action_ticks();
      for (int t = 0; t < n; ++t) pool.push_back({ti, t});
    }
    return pool;
  };
  const std::vector<Ref> train_pool = build_pool(res.train_traj_idx);
  const std::vector<Ref> val_pool = build_pool(res.val_traj_idx);
  if (train_pool.empty()) throw UsageError("train: training split has no samples");

  auto sample_batch = [&](const std::vector<Ref>& pool, Rng& rng, int bs) {
    std::vector<policy::BatchSample> batch;
    batch.reserve(bs);
    for (int i = 0; i < bs; ++i) {
      const Ref& r = pool[rng.bounded(pool.size())];
      const keyframe::KeyframeSet* kf =
          ann && r.traj < ann->per_traj.size() ? &ann->per_traj[r.traj] : nullptr;
      batch.push_back(make_sample(ds.trajs[r.traj], spec, mode, arch, kf, r.t, net));
    }
    return batch;
  };

  Adam adam(net.params());
  std::vector<bool> frozen(net.params().count(), false);
  if (cfg.frozen_encoder)
    for (int i : net.encoder_param_indices()) frozen[i] = true;

  double initial = -1;
  double last_val = -1;
  int diverge_streak = 0;
  std::vector<double> recent;

  for (int step = 0; step < cfg.steps; ++step) {
    Rng brng(derive_seed(cfg.seed, 0xba7c, static_cast<uint64_t>(step)));
    auto batch = sample_batch(train_pool, brng, cfg.batch_size);

    policy::DdpmGraph g;
    build_ddpm_loss(net, batch, derive_seed(cfg.seed, 0x9019, static_cast<uint64_t>(step)),
                    true, g);
    int total = g.loss;
    double ptp_v = -1, gt_v = -1;
    if (aux.ptp_enabled()) {
      const int node = regularize::build_ptp_loss(net, g.tape, g.nodes, batch);
      ptp_v = g.tape.scalar(node);
      total = g.tape.add(total, g.tape.scale(node, aux.ptp_weight));
    }
    if (aux.gt_enabled()) {
      const int node = regularize::build_gt_loss(net, g.tape, g.nodes, batch);
      gt_v = g.tape.scalar(node);
      total = g.tape.add(total, g.tape.scale(node, aux.gt_state_weight));
    }
    g.tape.backward(total);

    std::vector<Mat> grads;
    grads.reserve(net.params().count());
    for (size_t i = 0; i < net.params().count(); ++i)
      grads.push_back(g.tape.grad(g.nodes.param_leaf[i]));
    clip_global_norm(grads, cfg.grad_clip);
    adam.step(net.params(), grads, cfg, frozen);

    const double dd = g.tape.scalar(g.loss);
    if (initial < 0) initial = dd;
    recent.push_back(dd);
    if (recent.size() > 10) recent.erase(recent.begin());

    if (step > 50 && dd > 10.0 * initial) {
      if (++diverge_streak > 50)
        throw TrainingError("train: loss diverged (step " + std::to_string(step) +
                            ", loss " + std::to_string(dd) + " vs initial " +
                            std::to_string(initial) + ")");
    } else {
      diverge_streak = 0;
    }

    if (!val_pool.empty() && (step % cfg.val_every == 0 || step == cfg.steps - 1)) {
      Rng vrng(derive_seed(cfg.seed, 0x7a1, static_cast<uint64_t>(step)));
      auto vbatch = sample_batch(val_pool, vrng, std::min<int>(cfg.batch_size, 64));
      last_val = ddpm_loss(net, vbatch, derive_seed(cfg.seed, 0x7a2, step));
    }

    if (step % cfg.curve_every == 0 || step == cfg.steps - 1)
      res.curve.push_back({step, dd, last_val, ptp_v, gt_v});
  }

  res.initial_loss = initial;
  res.final_loss = std::accumulate(recent.begin(), recent.end(), 0.0) / recent.size();
  res.checkpoint = make_checkpoint(net, spec, train_digest, cfg.seed);
  return res;
}

void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_curve_csv: cannot open " + path);
  f << "step,train_loss,val_loss,ptp_loss,gt_loss\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g\n", p.step, p.train_loss,
                  p.val_loss, p.ptp, p.gt);
    f << buf;
  }
}

}  // namespace kflab::train
