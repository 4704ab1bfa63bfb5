#include <CLI11.hpp>

#include <iostream>

#include "kflab/dataset_io.hpp"
#include "kflab/harness.hpp"

using namespace kflab;

namespace {

keyframe::DetectorConfig detector_from_flags(const std::string& kind, int period, int latency,
                                             double fp, double fn, const std::string& endpoint) {
  keyframe::DetectorConfig d;
  d.kind = keyframe::detector_kind_from_name(kind);
  d.query_period_ticks = period;
  d.latency_ticks = latency;
  d.fp_rate = fp;
  d.fn_rate = fn;
  d.endpoint = endpoint;
  d.validate();
  return d;
}

std::vector<uint64_t> parse_seeds(const std::string& csv) {
  std::vector<uint64_t> out;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kflab: keyframe-conditioned imitation learning lab"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a demonstration dataset");
  std::string g_task = "fixed_password", g_out = "dataset.jsonl";
  int g_n = 0;
  uint64_t g_seed = 7;
  gen->add_option("--task", g_task, "task id")->required();
  gen->add_option("--n", g_n, "number of demonstrations")->required();
  gen->add_option("--seed", g_seed, "generation seed");
  gen->add_option("--out", g_out, "output path")->required();

  // annotate
  auto* ann = app.add_subcommand("annotate", "run a keyframe detector over a dataset");
  std::string a_dataset, a_out = "annotations.json", a_kind = "oracle", a_endpoint;
  int a_period = 10, a_latency = 30;
  double a_fp = 0, a_fn = 0;
  ann->add_option("--dataset", a_dataset)->required();
  ann->add_option("--out", a_out);
  ann->add_option("--detector", a_kind, "oracle|noisy_oracle|remote|constant_false");
  ann->add_option("--query-period", a_period);
  ann->add_option("--latency", a_latency);
  ann->add_option("--fp", a_fp);
  ann->add_option("--fn", a_fn);
  ann->add_option("--endpoint", a_endpoint, "host:port for remote detector");

  // train
  auto* tr = app.add_subcommand("train", "train one policy seed from an experiment config");
  std::string t_config;
  uint64_t t_seed = 0;
  bool t_seed_set = false;
  tr->add_option("--config", t_config)->required();
  tr->add_option("--seed", t_seed)->each([&](const std::string&) { t_seed_set = true; });

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_detector, e_endpoint, e_out;
  int e_episodes = 50, e_exec = 10, e_period = 10, e_latency = 30;
  double e_fp = 0, e_fn = 0;
  std::string e_seeds = "1,2,3";
  ev->add_option("--checkpoint", e_ckpt)->required();
  ev->add_option("--episodes", e_episodes);
  ev->add_option("--seeds", e_seeds);
  ev->add_option("--exec-len", e_exec);
  ev->add_option("--detector", e_detector, "detector kind (bpp checkpoints)");
  ev->add_option("--query-period", e_period);
  ev->add_option("--latency", e_latency);
  ev->add_option("--fp", e_fp);
  ev->add_option("--fn", e_fn);
  ev->add_option("--endpoint", e_endpoint);
  ev->add_option("--out", e_out, "optional CSV output path");

  // probe
  auto* pr = app.add_subcommand("probe", "linear-probe a checkpoint's features");
  std::string p_ckpt, p_dataset, p_ann, p_detector, p_endpoint;
  int p_episodes = 20, p_period = 10, p_latency = 30;
  double p_fp = 0, p_fn = 0;
  uint64_t p_seed = 1;
  pr->add_option("--checkpoint", p_ckpt)->required();
  pr->add_option("--dataset", p_dataset)->required();
  pr->add_option("--annotations", p_ann, "annotation file (bpp checkpoints)");
  pr->add_option("--episodes", p_episodes);
  pr->add_option("--seed", p_seed);
  pr->add_option("--detector", p_detector);
  pr->add_option("--query-period", p_period);
  pr->add_option("--latency", p_latency);
  pr->add_option("--fp", p_fp);
  pr->add_option("--fn", p_fn);
  pr->add_option("--endpoint", p_endpoint);

  // report
  auto* rp = app.add_subcommand("report", "aggregate result CSVs into comparison tables");
  std::string r_root;
  rp->add_option("--root", r_root)->required();

  // run
  auto* run = app.add_subcommand("run", "full pipeline from an experiment config");
  std::string run_config;
  run->add_option("--config", run_config)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto spec = env::EnvSpec::defaults(env::task_from_name(g_task));
      auto ds = expert::generate_dataset(spec, g_n, expert::default_style_mix(spec.task_id),
                                         g_seed);
      expert::write_dataset(ds, g_out);
      std::cout << "wrote " << g_out << " (" << ds.trajs.size() << " demos, digest "
                << ds.content_digest() << ", discarded " << ds.discarded << ")\n";
    } else if (*ann) {
      auto ds = expert::read_dataset(a_dataset);
      auto det = detector_from_flags(a_kind, a_period, a_latency, a_fp, a_fn, a_endpoint);
      auto an = keyframe::annotate_dataset(ds, det);
      keyframe::write_annotations(an, a_out);
      std::cout << "wrote " << a_out << " (" << an.failed_queries << "/" << an.total_queries
                << " failed queries)\n";
    } else if (*tr) {
      auto cfg = harness::ExperimentConfig::from_file(t_config);
      if (t_seed_set) cfg.seeds = {t_seed};
      harness::run_experiment(cfg);
      std::cout << "trained seeds into " << cfg.resolved_output_dir() << "\n";
    } else if (*ev) {
      const auto ckpt = policy::Checkpoint::load(e_ckpt);
      std::unique_ptr<keyframe::DetectorConfig> det;
      if (!e_detector.empty())
        det = std::make_unique<keyframe::DetectorConfig>(
            detector_from_flags(e_detector, e_period, e_latency, e_fp, e_fn, e_endpoint));
      const auto st = harness::evaluate(ckpt, det.get(), e_exec, e_episodes,
                                        parse_seeds(e_seeds));
      std::cout << "mean_score " << st.mean << " se " << st.se << " over "
                << st.episode_count << " episodes\n";
      if (!e_out.empty()) {
        std::ofstream f(e_out);
        f << "seed,mean_score\n";
        const auto seeds = parse_seeds(e_seeds);
        for (size_t i = 0; i < st.per_seed.size(); ++i)
          f << seeds[i] << "," << st.per_seed[i] << "\n";
      }
    } else if (*pr) {
      const auto ckpt = policy::Checkpoint::load(p_ckpt);
      const auto ds = expert::read_dataset(p_dataset);
      keyframe::Annotations an;
      const bool has_ann = !p_ann.empty();
      if (has_ann) an = keyframe::read_annotations(p_ann);
      std::unique_ptr<keyframe::DetectorConfig> det;
      if (!p_detector.empty())
        det = std::make_unique<keyframe::DetectorConfig>(
            detector_from_flags(p_detector, p_period, p_latency, p_fp, p_fn, p_endpoint));
      std::vector<rollout::RolloutResult> rollouts;
      harness::evaluate(ckpt, det.get(), ckpt.arch.chunk_len, p_episodes, {p_seed}, &rollouts);
      std::vector<size_t> fit_idx, val_idx;
      const size_t val_n = std::max<size_t>(1, ds.trajs.size() / 10);
      for (size_t i = 0; i < ds.trajs.size(); ++i)
        (i < ds.trajs.size() - val_n ? fit_idx : val_idx).push_back(i);
      const auto rep = probe::probe_report(ckpt, ds, has_ann ? &an : nullptr, fit_idx,
                                           val_idx, rollouts, det.get(), p_seed);
      std::cout << "iid_acc " << rep.iid_accuracy << " rollout_acc " << rep.rollout_accuracy
                << "\n";
    } else if (*rp) {
      std::cout << harness::report(r_root);
    } else if (*run) {
      const std::string dir = harness::run_experiment(run_config);
      std::cout << "artifacts in " << dir << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
