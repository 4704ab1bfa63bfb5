#include "kflab/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

namespace kflab::nn {

namespace {
std::atomic<ExecMode> g_mode{ExecMode::parallel};

// Shared inner bodies. Serial and parallel entry points drive the same
// per-row code, and no reduction is ever split across threads, so the two
// paths agree bitwise.

inline void matmul_row(const Mat& A, const Mat& B, Mat& out, int i) {
  double* dst = out.row(i);
  std::memset(dst, 0, sizeof(double) * out.cols);
  const double* arow = A.row(i);
  for (int k = 0; k < A.cols; ++k) {
    const double aik = arow[k];
    const double* brow = B.row(k);
    for (int j = 0; j < B.cols; ++j) dst[j] += aik * brow[j];
  }
}

inline void matmul_bt_row(const Mat& A, const Mat& B, Mat& out, int i) {
  const double* arow = A.row(i);
  double* dst = out.row(i);
  for (int j = 0; j < B.rows; ++j) {
    const double* brow = B.row(j);
    double s = 0.0;
    for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
    dst[j] = s;
  }
}

inline void matmul_at_col(const Mat& A, const Mat& B, Mat& out, int i) {
  double* dst = out.row(i);
  std::memset(dst, 0, sizeof(double) * out.cols);
  for (int r = 0; r < A.rows; ++r) {
    const double ari = A.at(r, i);
    const double* brow = B.row(r);
    for (int j = 0; j < B.cols; ++j) dst[j] += ari * brow[j];
  }
}

inline void attention_block_forward(const Mat& q, const Mat& k, const Mat& v,
                                    const AttentionDims& d,
                                    const std::vector<uint8_t>& key_pad,
                                    Mat& out, Mat& probs, int b, int h) {
  const int dh = d.width / d.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int base = b * d.seq;
  const int c0 = h * dh;
  std::vector<double> score(static_cast<size_t>(d.seq));
  for (int i = 0; i < d.seq; ++i) {
    for (int j = 0; j < d.seq; ++j) {
      if (key_pad[base + j]) {
        score[j] = -1e30;
        continue;
      }
      const double* qi = q.row(base + i) + c0;
      const double* kj = k.row(base + j) + c0;
      double s = 0.0;
      for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
      score[j] = s * scale;
    }
    double mx = score[0];
    for (int j = 1; j < d.seq; ++j) mx = std::max(mx, score[j]);
    double z = 0.0;
    for (int j = 0; j < d.seq; ++j) {
      score[j] = std::exp(score[j] - mx);
      z += score[j];
    }
    double* prow = probs.row((b * d.heads + h) * d.seq + i);
    for (int j = 0; j < d.seq; ++j) prow[j] = score[j] / z;
    double* orow = out.row(base + i) + c0;
    for (int c = 0; c < dh; ++c) orow[c] = 0.0;
    for (int j = 0; j < d.seq; ++j) {
      const double p = prow[j];
      const double* vj = v.row(base + j) + c0;
      for (int c = 0; c < dh; ++c) orow[c] += p * vj[c];
    }
  }
}

inline void attention_block_backward(const Mat& q, const Mat& k, const Mat& v,
                                     const AttentionDims& d, const Mat& probs,
                                     const Mat& dout, Mat& dq, Mat& dk,
                                     Mat& dv, int b, int h) {
  const int dh = d.width / d.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int base = b * d.seq;
  const int c0 = h * dh;
  std::vector<double> dp(static_cast<size_t>(d.seq));
  std::vector<double> ds(static_cast<size_t>(d.seq));
  for (int j = 0; j < d.seq; ++j) {
    double* dvj = dv.row(base + j) + c0;
    for (int c = 0; c < dh; ++c) dvj[c] = 0.0;
  }
  for (int i = 0; i < d.seq; ++i) {
    const double* prow = probs.row((b * d.heads + h) * d.seq + i);
    const double* doi = dout.row(base + i) + c0;
    // dv += p^T dout ; dp = dout v^T
    double dot = 0.0;
    for (int j = 0; j < d.seq; ++j) {
      const double* vj = v.row(base + j) + c0;
      double s = 0.0;
      for (int c = 0; c < dh; ++c) s += doi[c] * vj[c];
      dp[j] = s;
      dot += s * prow[j];
      double* dvj = dv.row(base + j) + c0;
      const double p = prow[j];
      for (int c = 0; c < dh; ++c) dvj[c] += p * doi[c];
    }
    // softmax backward
    for (int j = 0; j < d.seq; ++j) ds[j] = prow[j] * (dp[j] - dot);
    // dq = ds k * scale ; dk += ds^T q * scale
    double* dqi = dq.row(base + i) + c0;
    for (int c = 0; c < dh; ++c) dqi[c] = 0.0;
    const double* qi = q.row(base + i) + c0;
    for (int j = 0; j < d.seq; ++j) {
      const double dsj = ds[j] * scale;
      if (dsj == 0.0) continue;
      const double* kj = k.row(base + j) + c0;
      double* dkj = dk.row(base + j) + c0;
      for (int c = 0; c < dh; ++c) {
        dqi[c] += dsj * kj[c];
        dkj[c] += dsj * qi[c];
      }
    }
  }
}

}  // namespace

ExecMode exec_mode() { return g_mode.load(std::memory_order_relaxed); }
void set_exec_mode(ExecMode m) { g_mode.store(m, std::memory_order_relaxed); }

void matmul_serial(const Mat& A, const Mat& B, Mat& out) {
  assert(A.cols == B.rows);
  out = Mat(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) matmul_row(A, B, out, i);
}

void matmul_parallel(const Mat& A, const Mat& B, Mat& out) {
  assert(A.cols == B.rows);
  out = Mat(A.rows, B.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < A.rows; ++i) matmul_row(A, B, out, i);
}

void matmul(const Mat& A, const Mat& B, Mat& out) {
  if (exec_mode() == ExecMode::parallel)
    matmul_parallel(A, B, out);
  else
    matmul_serial(A, B, out);
}

void matmul_bt_serial(const Mat& A, const Mat& B, Mat& out) {
  assert(A.cols == B.cols);
  out = Mat(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) matmul_bt_row(A, B, out, i);
}

void matmul_bt_parallel(const Mat& A, const Mat& B, Mat& out) {
  assert(A.cols == B.cols);
  out = Mat(A.rows, B.rows);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < A.rows; ++i) matmul_bt_row(A, B, out, i);
}

void matmul_bt(const Mat& A, const Mat& B, Mat& out) {
  if (exec_mode() == ExecMode::parallel)
    matmul_bt_parallel(A, B, out);
  else
    matmul_bt_serial(A, B, out);
}

void matmul_at_serial(const Mat& A, const Mat& B, Mat& out) {
  assert(A.rows == B.rows);
  out = Mat(A.cols, B.cols);
  for (int i = 0; i < A.cols; ++i) matmul_at_col(A, B, out, i);
}

void matmul_at_parallel(const Mat& A, const Mat& B, Mat& out) {
  assert(A.rows == B.rows);
  out = Mat(A.cols, B.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < A.cols; ++i) matmul_at_col(A, B, out, i);
}

void matmul_at(const Mat& A, const Mat& B, Mat& out) {
  if (exec_mode() == ExecMode::parallel)
    matmul_at_parallel(A, B, out);
  else
    matmul_at_serial(A, B, out);
}

void attention_forward_serial(const Mat& q, const Mat& k, const Mat& v,
                              const AttentionDims& d,
                              const std::vector<uint8_t>& key_pad, Mat& out,
                              Mat& probs) {
  out = Mat(d.batch * d.seq, d.width);
  probs = Mat(d.batch * d.heads * d.seq, d.seq);
  for (int bh = 0; bh < d.batch * d.heads; ++bh)
    attention_block_forward(q, k, v, d, key_pad, out, probs, bh / d.heads,
                            bh % d.heads);
}

void attention_forward_parallel(const Mat& q, const Mat& k, const Mat& v,
                                const AttentionDims& d,
                                const std::vector<uint8_t>& key_pad, Mat& out,
                                Mat& probs) {
  out = Mat(d.batch * d.seq, d.width);
  probs = Mat(d.batch * d.heads * d.seq, d.seq);
#pragma omp parallel for schedule(static)
  for (int bh = 0; bh < d.batch * d.heads; ++bh)
    attention_block_forward(q, k, v, d, key_pad, out, probs, bh / d.heads,
                            bh % d.heads);
}

void attention_forward(const Mat& q, const Mat& k, const Mat& v,
                       const AttentionDims& d,
                       const std::vector<uint8_t>& key_pad, Mat& out,
                       Mat& probs) {
  if (exec_mode() == ExecMode::parallel)
    attention_forward_parallel(q, k, v, d, key_pad, out, probs);
  else
    attention_forward_serial(q, k, v, d, key_pad, out, probs);
}

void attention_backward_serial(const Mat& q, const Mat& k, const Mat& v,
                               const AttentionDims& d, const Mat& probs,
                               const Mat& dout, Mat& dq, Mat& dk, Mat& dv) {
  dq = Mat(q.rows, q.cols);
  dk = Mat(k.rows, k.cols);
  dv = Mat(v.rows, v.cols);
  for (int bh = 0; bh < d.batch * d.heads; ++bh)
    attention_block_backward(q, k, v, d, probs, dout, dq, dk, dv,
                             bh / d.heads, bh % d.heads);
}

void attention_backward_parallel(const Mat& q, const Mat& k, const Mat& v,
                                 const AttentionDims& d, const Mat& probs,
                                 const Mat& dout, Mat& dq, Mat& dk, Mat& dv) {
  dq = Mat(q.rows, q.cols);
  dk = Mat(k.rows, k.cols);
  dv = Mat(v.rows, v.cols);
#pragma omp parallel for schedule(static)
  for (int bh = 0; bh < d.batch * d.heads; ++bh)
    attention_block_backward(q, k, v, d, probs, dout, dq, dk, dv,
                             bh / d.heads, bh % d.heads);
}

void attention_backward(const Mat& q, const Mat& k, const Mat& v,
                        const AttentionDims& d, const Mat& probs,
                        const Mat& dout, Mat& dq, Mat& dk, Mat& dv) {
  if (exec_mode() == ExecMode::parallel)
    attention_backward_parallel(q, k, v, d, probs, dout, dq, dk, dv);
  else
    attention_backward_serial(q, k, v, d, probs, dout, dq, dk, dv);
}

}  // namespace kflab::nn
