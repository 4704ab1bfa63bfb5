#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kflab/kernels.hpp"
#include "kflab/rng.hpp"

using namespace kflab;

namespace {

Mat random_mat(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (auto& v : m.a) v = rng.normal();
  return m;
}

// independent reference: plain (i, j, k) dot products
Mat matmul_ref(const Mat& A, const Mat& B) {
  Mat out(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < B.cols; ++j) {
      double s = 0;
      for (int k = 0; k < A.cols; ++k) s += A.at(i, k) * B.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

// independent reference attention, one (batch, head) pair at a time
void attention_ref(const Mat& q, const Mat& k, const Mat& v, const nn::AttentionDims& d,
                   const std::vector<uint8_t>& pad, Mat& out) {
  out = Mat(d.batch * d.seq, d.width);
  const int dh = d.width / d.heads;
  for (int b = 0; b < d.batch; ++b)
    for (int h = 0; h < d.heads; ++h)
      for (int i = 0; i < d.seq; ++i) {
        std::vector<double> w(d.seq, 0.0);
        double z = 0;
        for (int j = 0; j < d.seq; ++j) {
          if (pad[b * d.seq + j]) continue;
          double s = 0;
          for (int c = 0; c < dh; ++c)
            s += q.at(b * d.seq + i, h * dh + c) * k.at(b * d.seq + j, h * dh + c);
          w[j] = std::exp(s / std::sqrt(double(dh)));
          z += w[j];
        }
        for (int j = 0; j < d.seq; ++j) {
          if (w[j] == 0) continue;
          for (int c = 0; c < dh; ++c)
            out.at(b * d.seq + i, h * dh + c) += (w[j] / z) * v.at(b * d.seq + j, h * dh + c);
        }
      }
}

}  // namespace

TEST_CASE("matmul variants agree bitwise and match the reference") {
  Rng rng(5);
  for (auto [n, k, m] : {std::tuple{7, 13, 5}, std::tuple{32, 48, 48}, std::tuple{1, 3, 9}}) {
    const Mat A = random_mat(rng, n, k), B = random_mat(rng, k, m);
    Mat s, p;
    nn::matmul_serial(A, B, s);
    nn::matmul_parallel(A, B, p);
    CHECK(s.a == p.a);
    const Mat ref = matmul_ref(A, B);
    for (size_t i = 0; i < ref.size(); ++i) CHECK(s.a[i] == doctest::Approx(ref.a[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul_bt and matmul_at agree with transposed references") {
  Rng rng(6);
  const Mat A = random_mat(rng, 9, 5), B = random_mat(rng, 11, 5), C = random_mat(rng, 9, 4);
  Mat bt_s, bt_p, at_s, at_p;
  nn::matmul_bt_serial(A, B, bt_s);
  nn::matmul_bt_parallel(A, B, bt_p);
  CHECK(bt_s.a == bt_p.a);
  Mat Bt(5, 11);
  for (int i = 0; i < B.rows; ++i)
    for (int j = 0; j < B.cols; ++j) Bt.at(j, i) = B.at(i, j);
  const Mat ref_bt = matmul_ref(A, Bt);
  for (size_t i = 0; i < ref_bt.size(); ++i)
    CHECK(bt_s.a[i] == doctest::Approx(ref_bt.a[i]).epsilon(1e-12));

  nn::matmul_at_serial(A, C, at_s);
  nn::matmul_at_parallel(A, C, at_p);
  CHECK(at_s.a == at_p.a);
  Mat At(5, 9);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) At.at(j, i) = A.at(i, j);
  const Mat ref_at = matmul_ref(At, C);
  for (size_t i = 0; i < ref_at.size(); ++i)
    CHECK(at_s.a[i] == doctest::Approx(ref_at.a[i]).epsilon(1e-12));
}

TEST_CASE("attention forward: serial == parallel, matches reference, pads excluded") {
  Rng rng(7);
  const nn::AttentionDims d{3, 5, 2, 8};
  const Mat q = random_mat(rng, 15, 8), k = random_mat(rng, 15, 8), v = random_mat(rng, 15, 8);
  std::vector<uint8_t> pad(15, 0);
  pad[3] = pad[4] = pad[9] = 1;

  Mat os, ps, op, pp;
  nn::attention_forward_serial(q, k, v, d, pad, os, ps);
  nn::attention_forward_parallel(q, k, v, d, pad, op, pp);
  CHECK(os.a == op.a);
  CHECK(ps.a == pp.a);

  Mat ref;
  attention_ref(q, k, v, d, pad, ref);
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(os.a[i] == doctest::Approx(ref.a[i]).epsilon(1e-10));

  // padded keys receive zero attention weight
  for (int b = 0; b < d.batch; ++b)
    for (int h = 0; h < d.heads; ++h)
      for (int i = 0; i < d.seq; ++i)
        for (int j = 0; j < d.seq; ++j)
          if (pad[b * d.seq + j])
            CHECK(ps.at((b * d.heads + h) * d.seq + i, j) == 0.0);
}

TEST_CASE("attention backward: serial == parallel") {
  Rng rng(8);
  const nn::AttentionDims d{2, 4, 2, 6};
  const Mat q = random_mat(rng, 8, 6), k = random_mat(rng, 8, 6), v = random_mat(rng, 8, 6);
  std::vector<uint8_t> pad(8, 0);
  pad[2] = 1;
  Mat out, probs;
  nn::attention_forward_serial(q, k, v, d, pad, out, probs);
  const Mat dout = random_mat(rng, 8, 6);
  Mat dqs, dks, dvs, dqp, dkp, dvp;
  nn::attention_backward_serial(q, k, v, d, probs, dout, dqs, dks, dvs);
  nn::attention_backward_parallel(q, k, v, d, probs, dout, dqp, dkp, dvp);
  CHECK(dqs.a == dqp.a);
  CHECK(dks.a == dkp.a);
  CHECK(dvs.a == dvp.a);
}

TEST_CASE("exec mode switch routes to both implementations") {
  Rng rng(9);
  const Mat A = random_mat(rng, 4, 4), B = random_mat(rng, 4, 4);
  Mat m1, m2;
  nn::set_exec_mode(nn::ExecMode::serial);
  nn::matmul(A, B, m1);
  nn::set_exec_mode(nn::ExecMode::parallel);
  nn::matmul(A, B, m2);
  CHECK(m1.a == m2.a);
}
