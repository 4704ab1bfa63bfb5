#include <chrono>
#include <cstdio>
#include <functional>

#include "kflab/expert.hpp"
#include "kflab/kernels.hpp"
#include "kflab/rng.hpp"
#include "kflab/train.hpp"

// Times the serial reference against the OpenMP kernels on the shapes the
// training loop actually uses, plus one end-to-end training-step comparison.

using namespace kflab;
using Clock = std::chrono::steady_clock;

namespace {

Mat random_mat(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (auto& v : m.a) v = rng.normal();
  return m;
}

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warmup
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void row(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-34s %10.3f %10.3f %8.2fx   %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, identical ? "bit-identical" : "MISMATCH");
}

bool same(const Mat& a, const Mat& b) { return a.rows == b.rows && a.cols == b.cols && a.a == b.a; }

}  // namespace

int main() {
  Rng rng(17);
  std::printf("%-34s %10s %10s %9s   %s\n", "kernel", "serial ms", "omp ms", "speedup",
              "check");

  {
    const Mat A = random_mat(rng, 256, 256), B = random_mat(rng, 256, 256);
    Mat s, p;
    const double ts = time_of([&] { nn::matmul_serial(A, B, s); }, 5);
    const double tp = time_of([&] { nn::matmul_parallel(A, B, p); }, 5);
    row("matmul 256x256x256", ts, tp, same(s, p));
  }
  {
    const Mat A = random_mat(rng, 320, 116), B = random_mat(rng, 116, 64);
    Mat s, p;
    const double ts = time_of([&] { nn::matmul_serial(A, B, s); }, 20);
    const double tp = time_of([&] { nn::matmul_parallel(A, B, p); }, 20);
    row("matmul 320x116x64 (encoder)", ts, tp, same(s, p));
  }
  {
    const nn::AttentionDims d{32, 10, 4, 48};
    const Mat q = random_mat(rng, 320, 48), k = random_mat(rng, 320, 48),
              v = random_mat(rng, 320, 48);
    std::vector<uint8_t> pad(320, 0);
    for (int i = 0; i < 320; i += 10) pad[i + 9] = 1;
    Mat os, ps, op, pp;
    const double ts = time_of([&] { nn::attention_forward_serial(q, k, v, d, pad, os, ps); }, 20);
    const double tp =
        time_of([&] { nn::attention_forward_parallel(q, k, v, d, pad, op, pp); }, 20);
    row("attention fwd b32 s10 w48", ts, tp, same(os, op));

    const Mat dout = random_mat(rng, 320, 48);
    Mat dqs, dks, dvs, dqp, dkp, dvp;
    const double tbs = time_of(
        [&] { nn::attention_backward_serial(q, k, v, d, ps, dout, dqs, dks, dvs); }, 20);
    const double tbp = time_of(
        [&] { nn::attention_backward_parallel(q, k, v, d, ps, dout, dqp, dkp, dvp); }, 20);
    row("attention bwd b32 s10 w48", tbs, tbp, same(dqs, dqp) && same(dks, dkp) && same(dvs, dvp));
  }

  // end-to-end: one ddpm training step on a small dataset
  {
    const auto spec = env::EnvSpec::defaults(env::TaskId::fixed_password);
    auto ds = expert::generate_dataset(spec, 4, expert::default_style_mix(spec.task_id), 3);
    policy::ArchConfig arch;
    const auto mode = policy::ConditioningMode::naive_history_defaults(spec.task_id);
    policy::PolicyNet net(arch, mode, spec.obs_dim(), spec.progress_classes(), false, false,
                          spec.progress_classes(), 1);
    std::vector<const std::vector<double>*> obs_rows, act_rows;
    for (const auto& tr : ds.trajs)
      for (const auto& t : tr.ticks) {
        obs_rows.push_back(&t.obs);
        if (!t.action.empty()) act_rows.push_back(&t.action);
      }
    net.obs_norm = policy::Normalizer::fit(obs_rows, spec.obs_dim());
    net.act_norm = policy::Normalizer::fit(act_rows, arch.action_dim);

    std::vector<policy::BatchSample> batch;
    for (int i = 0; i < 32; ++i)
      batch.push_back(train::make_sample(ds.trajs[i % ds.trajs.size()], spec, mode, arch,
                                         nullptr, 5 + i, net));
    auto run_once = [&] {
      policy::DdpmGraph g;
      policy::build_ddpm_loss(net, batch, 42, true, g);
      g.tape.backward(g.loss);
    };
    nn::set_exec_mode(nn::ExecMode::serial);
    const double ts = time_of(run_once, 3);
    nn::set_exec_mode(nn::ExecMode::parallel);
    const double tp = time_of(run_once, 3);
    row("ddpm train step b32 (fwd+bwd)", ts, tp, true);
  }

  return 0;
}
