#include "kflab/harness.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "kflab/digest.hpp"
#include "kflab/errors.hpp"
#include "kflab/rng.hpp"

namespace fs = std::filesystem;

namespace kflab::harness {

namespace {
const std::vector<std::string> kMethods = {"current_obs", "naive_history", "ptp",
                                           "bpp",         "oracle",        "naive+gt_state"};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}
}  // namespace

void ExperimentConfig::validate() const {
  env::task_from_name(task);
  if (std::find(kMethods.begin(), kMethods.end(), method) == kMethods.end())
    throw ConfigError("ExperimentConfig.method: unknown method " + method);
  if (method == "bpp" && !has_detector)
    throw ConfigError("ExperimentConfig: method bpp requires a detector block");
  if (seeds.empty()) throw ConfigError("ExperimentConfig.seeds must be nonempty");
  if (eval_episodes < 1) throw ConfigError("ExperimentConfig.eval_episodes must be >= 1");
  if (exec_len < 1 || exec_len > chunk_len)
    throw ConfigError("ExperimentConfig.exec_len must lie in [1, chunk_len]");
  if (n_demos == 0 || n_demos < -1) throw ConfigError("ExperimentConfig.n_demos must be positive");
  if (output_dir.empty()) throw ConfigError("ExperimentConfig.output_dir is required");
  arch().validate();
  if (has_detector) detector.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j{{"task", task},
                   {"method", method},
                   {"n_demos", n_demos},
                   {"data_seed", data_seed},
                   {"dataset_path", dataset_path},
                   {"chunk_len", chunk_len},
                   {"exec_len", exec_len},
                   {"width", width},
                   {"layers", layers},
                   {"heads", heads},
                   {"enc_width", enc_width},
                   {"enc_depth", enc_depth},
                   {"dropout", dropout},
                   {"diff_train_steps", diff_train_steps},
                   {"diff_sample_steps", diff_sample_steps},
                   {"num_past", num_past},
                   {"stride_ticks", stride_ticks},
                   {"max_keyframes", max_keyframes},
                   {"latency_train", latency_train},
                   {"train_steps", train_steps},
                   {"batch_size", batch_size},
                   {"lr", lr},
                   {"frozen_encoder", frozen_encoder},
                   {"ptp_weight", ptp_weight},
                   {"gt_state_weight", gt_state_weight},
                   {"eval_episodes", eval_episodes},
                   {"seeds", seeds},
                   {"output_dir", output_dir}};
  if (has_detector) {
    j["detector_kind"] = detector_kind_name(detector.kind);
    j["detector_query_period"] = detector.query_period_ticks;
    j["detector_latency"] = detector.latency_ticks;
    j["detector_fp"] = detector.fp_rate;
    j["detector_fn"] = detector.fn_rate;
    j["detector_endpoint"] = detector.endpoint;
  }
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.task = j.at("task").get<std::string>();
  c.method = j.at("method").get<std::string>();
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("n_demos", c.n_demos);
  opt("data_seed", c.data_seed);
  opt("dataset_path", c.dataset_path);
  opt("chunk_len", c.chunk_len);
  opt("exec_len", c.exec_len);
  opt("width", c.width);
  opt("layers", c.layers);
  opt("heads", c.heads);
  opt("enc_width", c.enc_width);
  opt("enc_depth", c.enc_depth);
  opt("dropout", c.dropout);
  opt("diff_train_steps", c.diff_train_steps);
  opt("diff_sample_steps", c.diff_sample_steps);
  opt("num_past", c.num_past);
  opt("stride_ticks", c.stride_ticks);
  opt("max_keyframes", c.max_keyframes);
  opt("latency_train", c.latency_train);
  opt("train_steps", c.train_steps);
  opt("batch_size", c.batch_size);
  opt("lr", c.lr);
  opt("frozen_encoder", c.frozen_encoder);
  opt("ptp_weight", c.ptp_weight);
  opt("gt_state_weight", c.gt_state_weight);
  opt("eval_episodes", c.eval_episodes);
  opt("output_dir", c.output_dir);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.contains("detector_kind")) {
    c.has_detector = true;
    c.detector.kind = keyframe::detector_kind_from_name(j.at("detector_kind").get<std::string>());
    if (j.contains("detector_query_period"))
      c.detector.query_period_ticks = j.at("detector_query_period").get<int>();
    if (j.contains("detector_latency"))
      c.detector.latency_ticks = j.at("detector_latency").get<int>();
    if (j.contains("detector_fp")) c.detector.fp_rate = j.at("detector_fp").get<double>();
    if (j.contains("detector_fn")) c.detector.fn_rate = j.at("detector_fn").get<double>();
    if (j.contains("detector_endpoint"))
      c.detector.endpoint = j.at("detector_endpoint").get<std::string>();
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("ExperimentConfig: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("ExperimentConfig: " + std::string(e.what()));
  }
  return from_json(j);
}

std::string ExperimentConfig::digest() const { return digest_of(to_json().dump()); }

int ExperimentConfig::default_demos() const {
  switch (env::task_from_name(task)) {
    case env::TaskId::fixed_password: return 300;
    case env::TaskId::variable_password: return 400;
    case env::TaskId::ingredient_insertion: return 400;
  }
  return 300;
}

env::EnvSpec ExperimentConfig::env_spec() const {
  return env::EnvSpec::defaults(env::task_from_name(task));
}

policy::ConditioningMode ExperimentConfig::mode() const {
  const auto t = env::task_from_name(task);
  policy::ConditioningMode m;
  if (method == "current_obs") {
    m = policy::ConditioningMode::current_obs();
  } else if (method == "oracle") {
    m = policy::ConditioningMode::oracle();
  } else if (method == "bpp") {
    m = policy::ConditioningMode::bpp_defaults(t);
    if (max_keyframes > 0) m.max_keyframes = max_keyframes;
    if (latency_train >= 0) m.latency_train_ticks = latency_train;
  } else {  // naive_history, ptp, naive+gt_state
    m = policy::ConditioningMode::naive_history_defaults(t);
    if (num_past > 0) m.num_past = num_past;
    if (stride_ticks > 0) m.stride_ticks = stride_ticks;
  }
  return m;
}

policy::ArchConfig ExperimentConfig::arch() const {
  policy::ArchConfig a;
  a.enc_width = enc_width;
  a.enc_depth = enc_depth;
  a.width = width;
  a.layers = layers;
  a.heads = heads;
  a.dropout = dropout;
  a.chunk_len = chunk_len;
  a.action_dim = 3;
  a.diff_train_steps = diff_train_steps;
  a.diff_sample_steps = diff_sample_steps;
  return a;
}

regularize::AuxConfig ExperimentConfig::aux() const {
  regularize::AuxConfig x;
  if (method == "ptp") x.ptp_weight = ptp_weight;
  if (method == "naive+gt_state") x.gt_state_weight = gt_state_weight;
  return x;
}

train::TrainConfig ExperimentConfig::train_config(uint64_t seed) const {
  train::TrainConfig t;
  t.steps = train_steps;
  t.batch_size = batch_size;
  t.lr = lr;
  t.frozen_encoder = frozen_encoder;
  t.seed = seed;
  return t;
}

std::string ExperimentConfig::detector_label() const {
  if (!has_detector) return "none";
  std::string s = detector_kind_name(detector.kind);
  if (detector.kind == keyframe::DetectorKind::noisy_oracle) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "(fp=%g,fn=%g)", detector.fp_rate, detector.fn_rate);
    s += buf;
  }
  return s;
}

std::string ExperimentConfig::resolved_output_dir() const {
  fs::path p(output_dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kArtifactsRootEnv)) p = fs::path(root) / p;
  }
  return p.string();
}

EvalStats evaluate_agents(const env::EnvSpec& spec, const AgentFactory& make,
                          int n_episodes, const std::vector<uint64_t>& seeds,
                          std::vector<rollout::RolloutResult>* keep) {
  if (n_episodes < 1) throw UsageError("evaluate: n_episodes must be >= 1");
  if (seeds.empty()) throw UsageError("evaluate: seeds must be nonempty");
  const int k = static_cast<int>(seeds.size());
  const int total = k * n_episodes;
  std::vector<rollout::RolloutResult> results(total);

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < total; ++i) {
    const uint64_t seed = seeds[i / n_episodes];
    const int ep = i % n_episodes;
    const uint64_t env_seed = derive_seed(seed, 0xe9a1, static_cast<uint64_t>(ep));
    auto agent = make(env_seed);
    results[i] = rollout::run_episode(spec, *agent, env_seed);
  }

  EvalStats st;
  st.episode_count = total;
  for (int s = 0; s < k; ++s) {
    double sum = 0;
    for (int e = 0; e < n_episodes; ++e) sum += results[s * n_episodes + e].score;
    st.per_seed.push_back(sum / n_episodes);
  }
  for (double v : st.per_seed) st.mean += v;
  st.mean /= k;
  if (k > 1) {
    double sq = 0;
    for (double v : st.per_seed) sq += (v - st.mean) * (v - st.mean);
    st.se = std::sqrt(sq / (k - 1)) / std::sqrt(static_cast<double>(k));
  }
  if (keep) *keep = std::move(results);
  return st;
}

EvalStats evaluate(const policy::Checkpoint& ckpt, const keyframe::DetectorConfig* det,
                   int exec_len, int n_episodes, const std::vector<uint64_t>& seeds,
                   std::vector<rollout::RolloutResult>* keep) {
  auto factory = [&](uint64_t env_seed) -> std::unique_ptr<rollout::Agent> {
    return std::make_unique<rollout::PolicyAgent>(ckpt, exec_len, det, env_seed);
  };
  return evaluate_agents(ckpt.spec, factory, n_episodes, seeds, keep);
}

namespace {

void atomic_write(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error("cannot open " + tmp.string());
    f << content;
  }
  fs::rename(tmp, path);
}

struct Manifest {
  fs::path path;
  nlohmann::json j;

  static Manifest open(const fs::path& dir, const std::string& config_digest) {
    Manifest m;
    m.path = dir / "manifest.json";
    if (fs::exists(m.path)) {
      std::ifstream f(m.path);
      try {
        f >> m.j;
      } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("manifest parse failure: " + std::string(e.what()));
      }
      if (m.j.value("config_digest", "") != config_digest)
        throw IntegrityError(
            "artifacts directory was produced by a different config (digest mismatch)");
    } else {
      m.j = {{"config_digest", config_digest}, {"stages", nlohmann::json::object()}};
      m.flush();
    }
    return m;
  }

  bool done(const std::string& stage) const {
    return j.at("stages").contains(stage) &&
           j.at("stages").at(stage).value("status", "") == "done";
  }

  nlohmann::json stage_data(const std::string& stage) const { return j.at("stages").at(stage); }

  void mark_done(const std::string& stage, nlohmann::json data) {
    data["status"] = "done";
    data["finished_at"] = static_cast<long long>(::time(nullptr));
    j["stages"][stage] = std::move(data);
    flush();
  }

  void mark_failed(const std::string& stage, const std::string& what) {
    j["stages"][stage] = {{"status", "failed"}, {"error", what}};
    flush();
  }

  void flush() { atomic_write(path, j.dump(2) + "\n"); }
};

std::string csv_quote(const std::string& s) { return s; }  // labels carry no commas

}  // namespace

std::string run_experiment(const std::string& config_path) {
  return run_experiment(ExperimentConfig::from_file(config_path));
}

std::string run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir = cfg.resolved_output_dir();
  fs::create_directories(dir);
  const std::string cfg_digest = cfg.digest();
  atomic_write(dir / "config.json", cfg.to_json().dump(2) + "\n");
  Manifest manifest = Manifest::open(dir, cfg_digest);

  const env::EnvSpec spec = cfg.env_spec();
  const auto mode = cfg.mode();
  const auto arch = cfg.arch();
  const auto aux = cfg.aux();
  const bool is_bpp = mode.kind == policy::ModeKind::bpp;

  // --- dataset ---
  expert::DemoDataset ds;
  const std::string stage_ds = "dataset";
  try {
    if (!cfg.dataset_path.empty()) {
      ds = expert::read_dataset(cfg.dataset_path);
      if (ds.spec.task_id != spec.task_id)
        throw ConfigError("ExperimentConfig.dataset_path: dataset task does not match");
      if (!manifest.done(stage_ds))
        manifest.mark_done(stage_ds, {{"dataset_digest", ds.content_digest()},
                                      {"path", cfg.dataset_path}});
    } else {
      const fs::path ds_path = dir / "dataset.jsonl";
      if (manifest.done(stage_ds) && fs::exists(ds_path)) {
        ds = expert::read_dataset(ds_path.string());
      } else {
        const int n = cfg.n_demos > 0 ? cfg.n_demos : cfg.default_demos();
        ds = expert::generate_dataset(spec, n, expert::default_style_mix(spec.task_id),
                                      cfg.data_seed);
        expert::write_dataset(ds, ds_path.string());
        manifest.mark_done(stage_ds, {{"dataset_digest", ds.content_digest()},
                                      {"path", ds_path.string()},
                                      {"discarded", ds.discarded}});
      }
    }
  } catch (const std::exception& e) {
    manifest.mark_failed(stage_ds, e.what());
    throw;
  }
  const std::string ds_digest = ds.content_digest();

  // --- annotations ---
  keyframe::Annotations ann;
  const bool need_ann = is_bpp;
  if (need_ann) {
    const std::string stage_ann = "annotations";
    const fs::path ann_path = dir / "annotations.json";
    try {
      if (manifest.done(stage_ann) && fs::exists(ann_path)) {
        ann = keyframe::read_annotations(ann_path.string());
        if (ann.dataset_digest != ds_digest || ann.detector_digest != cfg.detector.digest())
          throw IntegrityError("stored annotations do not match the dataset/detector digests");
      } else {
        ann = keyframe::annotate_dataset(ds, cfg.detector);
        keyframe::write_annotations(ann, ann_path.string());
        manifest.mark_done(stage_ann, {{"dataset_digest", ann.dataset_digest},
                                       {"detector_digest", ann.detector_digest},
                                       {"failed_queries", ann.failed_queries},
                                       {"total_queries", ann.total_queries}});
      }
    } catch (const std::exception& e) {
      manifest.mark_failed(stage_ann, e.what());
      throw;
    }
  }

  // --- per-seed train / eval / probe ---
  const keyframe::DetectorConfig* det = cfg.has_detector ? &cfg.detector : nullptr;
  for (uint64_t seed : cfg.seeds) {
    const std::string tag = std::to_string(seed);
    const fs::path ckpt_path = dir / ("ckpt_seed" + tag + ".json");
    const fs::path curve_path = dir / ("curve_seed" + tag + ".csv");
    const fs::path eval_path = dir / ("eval_seed" + tag + ".json");
    const fs::path probe_path = dir / ("probe_seed" + tag + ".json");

    const std::string stage_train = "train_" + tag;
    std::vector<size_t> train_idx, val_idx;
    try {
      if (manifest.done(stage_train) && fs::exists(ckpt_path)) {
        const auto data = manifest.stage_data(stage_train);
        train_idx = data.at("train_idx").get<std::vector<size_t>>();
        val_idx = data.at("val_idx").get<std::vector<size_t>>();
      } else {
        train::TrainResult tr =
            train::train(ds, need_ann ? &ann : nullptr, mode, arch, aux, cfg.train_config(seed));
        tr.checkpoint.save(ckpt_path.string());
        train::write_curve_csv(tr.curve, curve_path.string());
        train_idx = tr.train_traj_idx;
        val_idx = tr.val_traj_idx;
        manifest.mark_done(stage_train,
                           {{"checkpoint_digest", tr.checkpoint.digest()},
                            {"initial_loss", tr.initial_loss},
                            {"final_loss", tr.final_loss},
                            {"train_idx", train_idx},
                            {"val_idx", val_idx}});
      }
    } catch (const std::exception& e) {
      manifest.mark_failed(stage_train, e.what());
      throw;
    }

    const std::string stage_eval = "eval_" + tag;
    try {
      if (!(manifest.done(stage_eval) && fs::exists(eval_path) && fs::exists(probe_path))) {
        const policy::Checkpoint ckpt = policy::Checkpoint::load(ckpt_path.string());
        std::vector<rollout::RolloutResult> rollouts;
        const EvalStats st =
            evaluate(ckpt, det, cfg.exec_len, cfg.eval_episodes, {seed}, &rollouts);

        std::vector<double> scores;
        for (const auto& r : rollouts) scores.push_back(r.score);
        double ep_se = 0;
        if (scores.size() > 1) {
          double sq = 0;
          for (double v : scores) sq += (v - st.mean) * (v - st.mean);
          ep_se = std::sqrt(sq / (scores.size() - 1)) / std::sqrt(double(scores.size()));
        }
        nlohmann::json ej{{"seed", seed},
                          {"mean_score", st.mean},
                          {"se", ep_se},
                          {"scores", scores},
                          {"n_demos", ds.trajs.size()},
                          {"dataset_digest", ds_digest},
                          {"detector_digest", det ? det->digest() : ""},
                          {"checkpoint_digest", ckpt.digest()},
                          {"config_digest", cfg_digest}};
        atomic_write(eval_path, ej.dump(2) + "\n");

        const probe::ProbeReport pr = probe::probe_report(
            ckpt, ds, need_ann ? &ann : nullptr, train_idx, val_idx, rollouts, det, seed);
        nlohmann::json pj{{"seed", seed},
                          {"iid_acc", pr.iid_accuracy},
                          {"rollout_acc", pr.rollout_accuracy},
                          {"class_counts_iid", pr.class_counts_iid},
                          {"class_counts_rollout", pr.class_counts_rollout},
                          {"dataset_digest", ds_digest},
                          {"detector_digest", det ? det->digest() : ""},
                          {"checkpoint_digest", pr.checkpoint_digest},
                          {"config_digest", cfg_digest}};
        atomic_write(probe_path, pj.dump(2) + "\n");
        manifest.mark_done(stage_eval, {{"mean_score", st.mean}});
      }
    } catch (const std::exception& e) {
      manifest.mark_failed(stage_eval, e.what());
      throw;
    }
  }

  // --- result CSVs (cheap; always rebuilt deterministically) ---
  std::string eval_csv =
      "task,method,chunk_len,exec_len,n_demos,detector,seed,mean_score,se,"
      "dataset_digest,detector_digest,checkpoint_digest,config_digest\n";
  std::string probe_csv =
      "task,method,seed,iid_acc,rollout_acc,dataset_digest,detector_digest,"
      "checkpoint_digest,config_digest\n";
  for (uint64_t seed : cfg.seeds) {
    const std::string tag = std::to_string(seed);
    std::ifstream ef(dir / ("eval_seed" + tag + ".json"));
    nlohmann::json ej;
    ef >> ej;
    eval_csv += csv_quote(cfg.task) + "," + cfg.method + "," + std::to_string(cfg.chunk_len) +
                "," + std::to_string(cfg.exec_len) + "," +
                std::to_string(ej.at("n_demos").get<size_t>()) + "," + cfg.detector_label() +
                "," + tag + "," + fmt(ej.at("mean_score").get<double>()) + "," +
                fmt(ej.at("se").get<double>()) + "," +
                ej.at("dataset_digest").get<std::string>() + "," +
                ej.at("detector_digest").get<std::string>() + "," +
                ej.at("checkpoint_digest").get<std::string>() + "," +
                ej.at("config_digest").get<std::string>() + "\n";
    std::ifstream pf(dir / ("probe_seed" + tag + ".json"));
    nlohmann::json pj;
    pf >> pj;
    probe_csv += csv_quote(cfg.task) + "," + cfg.method + "," + tag + "," +
                 fmt(pj.at("iid_acc").get<double>()) + "," +
                 fmt(pj.at("rollout_acc").get<double>()) + "," +
                 pj.at("dataset_digest").get<std::string>() + "," +
                 pj.at("detector_digest").get<std::string>() + "," +
                 pj.at("checkpoint_digest").get<std::string>() + "," +
                 pj.at("config_digest").get<std::string>() + "\n";
  }
  atomic_write(dir / "eval.csv", eval_csv);
  atomic_write(dir / "probe.csv", probe_csv);

  return dir.string();
}

}  // namespace kflab::harness
