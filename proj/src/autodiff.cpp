#include "kflab/autodiff.hpp"

#include <cassert>
#include <cmath>

#include "kflab/rng.hpp"

namespace kflab::nn {

namespace {
constexpr double kLnEps = 1e-5;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

int Tape::push(Mat val, std::function<void()> back) {
  Node n;
  n.grad = Mat(val.rows, val.cols);
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Mat m) { return push(std::move(m)); }

int Tape::matmul(int a, int b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  assert(A.cols == B.rows);
  Mat out;
  kflab::nn::matmul(A, B, out);
  int id = push(std::move(out));
  nodes_[id].back = [this, a, b, id]() {
    const Mat& g = nodes_[id].grad;
    Mat da, db;
    matmul_bt(g, nodes_[b].val, da);   // dA = g B^T
    matmul_at(nodes_[a].val, g, db);   // dB = A^T g
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < ga.size(); ++i) ga.a[i] += da.a[i];
    Mat& gb = nodes_[b].grad;
    for (size_t i = 0; i < gb.size(); ++i) gb.a[i] += db.a[i];
  };
  return id;
}

int Tape::add(int a, int b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  assert(A.same_shape(B));
  Mat out = A;
  for (size_t i = 0; i < out.size(); ++i) out.a[i] += B.a[i];
  int id = push(std::move(out));
  nodes_[id].back = [this, a, b, id]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    Mat& gb = nodes_[b].grad;
    for (size_t i = 0; i < g.size(); ++i) {
      ga.a[i] += g.a[i];
      gb.a[i] += g.a[i];
    }
  };
  return id;
}

int Tape::sub(int a, int b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  assert(A.same_shape(B));
  Mat out = A;
  for (size_t i = 0; i < out.size(); ++i) out.a[i] -= B.a[i];
  int id = push(std::move(out));
  nodes_[id].back = [this, a, b, id]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    Mat& gb = nodes_[b].grad;
    for (size_t i = 0; i < g.size(); ++i) {
      ga.a[i] += g.a[i];
      gb.a[i] -= g.a[i];
    }
  };
  return id;
}

int Tape::add_rowvec(int a, int b) {
  const Mat& A = nodes_[a].val;
  const Mat& B = nodes_[b].val;
  assert(B.rows == 1 && B.cols == A.cols);
  Mat out = A;
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) += B.at(0, c);
  int id = push(std::move(out));
  nodes_[id].back = [this, a, b, id]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    Mat& gb = nodes_[b].grad;
    for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) gb.at(0, c) += g.at(r, c);
  };
  return id;
}

int Tape::add_tiled_rows(int a, int p, int reps) {
  const Mat& A = nodes_[a].val;
  const Mat& P = nodes_[p].val;
  assert(A.rows == P.rows * reps && A.cols == P.cols);
  Mat out = A;
  for (int r = 0; r < out.rows; ++r) {
    const double* prow = P.row(r % P.rows);
    double* orow = out.row(r);
    for (int c = 0; c < out.cols; ++c) orow[c] += prow[c];
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, a, p, id]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    Mat& gp = nodes_[p].grad;
    for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
    for (int r = 0; r < g.rows; ++r) {
      double* prow = gp.row(r % gp.rows);
      const double* grow = g.row(r);
      for (int c = 0; c < g.cols; ++c) prow[c] += grow[c];
    }
  };
  return id;
}

int Tape::scale(int a, double s) {
  Mat out = nodes_[a].val;
  for (double& x : out.a) x *= s;
  int id = push(std::move(out));
  nodes_[id].back = [this, a, s, id]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < g.size(); ++i) ga.a[i] += s * g.a[i];
  };
  return id;
}

int Tape::silu(int a) {
  const Mat& A = nodes_[a].val;
  Mat out(A.rows, A.cols);
  for (size_t i = 0; i < A.size(); ++i) out.a[i] = A.a[i] * sigmoid(A.a[i]);
  int id = push(std::move(out));
  nodes_[id].back = [this, a, id]() {
    const Mat& g = nodes_[id].grad;
    const Mat& A = nodes_[a].val;
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < g.size(); ++i) {
      const double s = sigmoid(A.a[i]);
      ga.a[i] += g.a[i] * s * (1.0 + A.a[i] * (1.0 - s));
    }
  };
  return id;
}

int Tape::layernorm(int a, int gain, int bias) {
  const Mat& A = nodes_[a].val;
  const Mat& G = nodes_[gain].val;
  const Mat& B = nodes_[bias].val;
  assert(G.rows == 1 && G.cols == A.cols && B.rows == 1 && B.cols == A.cols);
  const int n = A.cols;
  Mat xhat(A.rows, A.cols);
  Mat inv_sd(A.rows, 1);
  Mat out(A.rows, A.cols);
  for (int r = 0; r < A.rows; ++r) {
    const double* x = A.row(r);
    double mu = 0.0;
    for (int c = 0; c < n; ++c) mu += x[c];
    mu /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= n;
    const double isd = 1.0 / std::sqrt(var + kLnEps);
    inv_sd.at(r, 0) = isd;
    for (int c = 0; c < n; ++c) {
      xhat.at(r, c) = (x[c] - mu) * isd;
      out.at(r, c) = G.at(0, c) * xhat.at(r, c) + B.at(0, c);
    }
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, a, gain, bias, id, xhat = std::move(xhat),
                     inv_sd = std::move(inv_sd)]() {
    const Mat& g = nodes_[id].grad;
    const Mat& G = nodes_[gain].val;
    const int n = g.cols;
    Mat& ga = nodes_[a].grad;
    Mat& gg = nodes_[gain].grad;
    Mat& gb = nodes_[bias].grad;
    for (int r = 0; r < g.rows; ++r) {
      const double isd = inv_sd.at(r, 0);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int c = 0; c < n; ++c) {
        const double dxh = g.at(r, c) * G.at(0, c);
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * xhat.at(r, c);
        gg.at(0, c) += g.at(r, c) * xhat.at(r, c);
        gb.at(0, c) += g.at(r, c);
      }
      for (int c = 0; c < n; ++c) {
        const double dxh = g.at(r, c) * G.at(0, c);
        ga.at(r, c) += isd * (dxh - (sum_dxhat + xhat.at(r, c) * sum_dxhat_xhat) / n);
      }
    }
  };
  return id;
}

int Tape::attention(int q, int k, int v, const AttentionDims& dims,
                    std::vector<uint8_t> key_pad) {
  Mat out, probs;
  attention_forward(nodes_[q].val, nodes_[k].val, nodes_[v].val, dims, key_pad,
                    out, probs);
  int id = push(std::move(out));
  nodes_[id].back = [this, q, k, v, dims, id, probs = std::move(probs)]() {
    Mat dq, dk, dv;
    attention_backward(nodes_[q].val, nodes_[k].val, nodes_[v].val, dims,
                       probs, nodes_[id].grad, dq, dk, dv);
    Mat& gq = nodes_[q].grad;
    for (size_t i = 0; i < gq.size(); ++i) gq.a[i] += dq.a[i];
    Mat& gk = nodes_[k].grad;
    for (size_t i = 0; i < gk.size(); ++i) gk.a[i] += dk.a[i];
    Mat& gv = nodes_[v].grad;
    for (size_t i = 0; i < gv.size(); ++i) gv.a[i] += dv.a[i];
  };
  return id;
}

int Tape::compose_rows(int total_rows, int cols,
                       const std::vector<std::pair<int, std::vector<int>>>& parts) {
  Mat out(total_rows, cols);
  for (const auto& [node, dst] : parts) {
    const Mat& P = nodes_[node].val;
    assert(P.cols == cols && static_cast<int>(dst.size()) == P.rows);
    for (int r = 0; r < P.rows; ++r)
      std::copy(P.row(r), P.row(r) + cols, out.row(dst[r]));
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, parts, id]() {
    const Mat& g = nodes_[id].grad;
    for (const auto& [node, dst] : parts) {
      Mat& gp = nodes_[node].grad;
      for (int r = 0; r < gp.rows; ++r) {
        const double* src = g.row(dst[r]);
        double* d = gp.row(r);
        for (int c = 0; c < g.cols; ++c) d[c] += src[c];
      }
    }
  };
  return id;
}

int Tape::gather_rows(int a, std::vector<int> idx) {
  const Mat& A = nodes_[a].val;
  Mat out(static_cast<int>(idx.size()), A.cols);
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(A.row(idx[r]), A.row(idx[r]) + A.cols, out.row(static_cast<int>(r)));
  int id = push(std::move(out));
  nodes_[id].back = [this, a, idx = std::move(idx), id]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* src = g.row(static_cast<int>(r));
      double* d = ga.row(idx[r]);
      for (int c = 0; c < g.cols; ++c) d[c] += src[c];
    }
  };
  return id;
}

int Tape::group_mean_rows(int a, std::vector<std::vector<int>> groups) {
  const Mat& A = nodes_[a].val;
  Mat out(static_cast<int>(groups.size()), A.cols);
  for (size_t gI = 0; gI < groups.size(); ++gI) {
    assert(!groups[gI].empty());
    double* orow = out.row(static_cast<int>(gI));
    for (int r : groups[gI]) {
      const double* src = A.row(r);
      for (int c = 0; c < A.cols; ++c) orow[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(groups[gI].size());
    for (int c = 0; c < A.cols; ++c) orow[c] *= inv;
  }
  int id = push(std::move(out));
  nodes_[id].back = [this, a, groups = std::move(groups), id]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    for (size_t gI = 0; gI < groups.size(); ++gI) {
      const double inv = 1.0 / static_cast<double>(groups[gI].size());
      const double* grow = g.row(static_cast<int>(gI));
      for (int r : groups[gI]) {
        double* d = ga.row(r);
        for (int c = 0; c < g.cols; ++c) d[c] += grow[c] * inv;
      }
    }
  };
  return id;
}

int Tape::dropout(int a, double drop_prob, uint64_t seed) {
  if (drop_prob <= 0.0) return a;
  const Mat& A = nodes_[a].val;
  Rng rng(seed);
  Mat mask(A.rows, A.cols);
  const double keep = 1.0 - drop_prob;
  for (size_t i = 0; i < mask.size(); ++i)
    mask.a[i] = rng.uniform() < drop_prob ? 0.0 : 1.0 / keep;
  Mat out(A.rows, A.cols);
  for (size_t i = 0; i < A.size(); ++i) out.a[i] = A.a[i] * mask.a[i];
  int id = push(std::move(out));
  nodes_[id].back = [this, a, id, mask = std::move(mask)]() {
    const Mat& g = nodes_[id].grad;
    Mat& ga = nodes_[a].grad;
    for (size_t i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * mask.a[i];
  };
  return id;
}

int Tape::mse(int pred, const Mat& target) {
  const Mat& P = nodes_[pred].val;
  assert(P.same_shape(target));
  const double inv_n = 1.0 / static_cast<double>(P.size());
  double loss = 0.0;
  for (size_t i = 0; i < P.size(); ++i) {
    const double d = P.a[i] - target.a[i];
    loss += d * d;
  }
  Mat out(1, 1);
  out.a[0] = loss * inv_n;
  int id = push(std::move(out));
  nodes_[id].back = [this, pred, target, inv_n, id]() {
    const double g = nodes_[id].grad.a[0];
    const Mat& P = nodes_[pred].val;
    Mat& gp = nodes_[pred].grad;
    for (size_t i = 0; i < P.size(); ++i)
      gp.a[i] += g * 2.0 * inv_n * (P.a[i] - target.a[i]);
  };
  return id;
}

Mat Tape::softmax_rows(const Mat& logits) {
  Mat p(logits.rows, logits.cols);
  for (int r = 0; r < logits.rows; ++r) {
    const double* x = logits.row(r);
    double mx = x[0];
    for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    double* prow = p.row(r);
    for (int c = 0; c < logits.cols; ++c) {
      prow[c] = std::exp(x[c] - mx);
      z += prow[c];
    }
    for (int c = 0; c < logits.cols; ++c) prow[c] /= z;
  }
  return p;
}

int Tape::softmax_xent(int logits, std::vector<int> labels) {
  const Mat& L = nodes_[logits].val;
  assert(static_cast<int>(labels.size()) == L.rows);
  Mat p = softmax_rows(L);
  double loss = 0.0;
  for (int r = 0; r < L.rows; ++r)
    loss -= std::log(std::max(p.at(r, labels[r]), 1e-300));
  loss /= L.rows;
  Mat out(1, 1);
  out.a[0] = loss;
  int id = push(std::move(out));
  nodes_[id].back = [this, logits, labels = std::move(labels), id,
                     p = std::move(p)]() {
    const double g = nodes_[id].grad.a[0];
    Mat& gl = nodes_[logits].grad;
    const double inv_r = 1.0 / gl.rows;
    for (int r = 0; r < gl.rows; ++r)
      for (int c = 0; c < gl.cols; ++c) {
        const double onehot = (c == labels[r]) ? 1.0 : 0.0;
        gl.at(r, c) += g * inv_r * (p.at(r, c) - onehot);
      }
  };
  return id;
}

void Tape::backward(int loss) {
  assert(nodes_[loss].val.rows == 1 && nodes_[loss].val.cols == 1);
  nodes_[loss].grad.a[0] = 1.0;
  for (int i = loss; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back();
}

}  // namespace kflab::nn
