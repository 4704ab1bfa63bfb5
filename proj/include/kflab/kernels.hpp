#pragma once

#include <cstdint>
#include <vector>

#include "kflab/mat.hpp"

namespace kflab::nn {

// Every kernel has a serial reference and an OpenMP variant. The parallel
// variants split work across independent output rows / batch elements and
// never split a single reduction, so both paths produce bit-identical
// results at any thread count. Tests assert that equivalence; bench_kernels
// times the two side by side.

enum class ExecMode { serial, parallel };

ExecMode exec_mode();
void set_exec_mode(ExecMode m);

// out = A * B. A: n x k, B: k x m.
void matmul_serial(const Mat& A, const Mat& B, Mat& out);
void matmul_parallel(const Mat& A, const Mat& B, Mat& out);
void matmul(const Mat& A, const Mat& B, Mat& out);

// out = A * B^T. A: n x k, B: m x k.
void matmul_bt_serial(const Mat& A, const Mat& B, Mat& out);
void matmul_bt_parallel(const Mat& A, const Mat& B, Mat& out);
void matmul_bt(const Mat& A, const Mat& B, Mat& out);

// out = A^T * B. A: k x n, B: k x m.
void matmul_at_serial(const Mat& A, const Mat& B, Mat& out);
void matmul_at_parallel(const Mat& A, const Mat& B, Mat& out);
void matmul_at(const Mat& A, const Mat& B, Mat& out);

// Masked scaled-dot-product attention over a batch of token blocks.
// q/k/v are (batch*seq) x width, width = heads * head_dim. key_pad marks
// rows excluded as attention keys. probs (optional out) stores the softmax
// weights per (batch, head): batch*heads*seq x seq, for the backward pass.
struct AttentionDims {
  int batch = 0;
  int seq = 0;
  int heads = 0;
  int width = 0;  // heads * head_dim
};

void attention_forward_serial(const Mat& q, const Mat& k, const Mat& v,
                              const AttentionDims& d,
                              const std::vector<uint8_t>& key_pad, Mat& out,
                              Mat& probs);
void attention_forward_parallel(const Mat& q, const Mat& k, const Mat& v,
                                const AttentionDims& d,
                                const std::vector<uint8_t>& key_pad, Mat& out,
                                Mat& probs);
void attention_forward(const Mat& q, const Mat& k, const Mat& v,
                       const AttentionDims& d,
                       const std::vector<uint8_t>& key_pad, Mat& out,
                       Mat& probs);

void attention_backward_serial(const Mat& q, const Mat& k, const Mat& v,
                               const AttentionDims& d, const Mat& probs,
                               const Mat& dout, Mat& dq, Mat& dk, Mat& dv);
void attention_backward_parallel(const Mat& q, const Mat& k, const Mat& v,
                                 const AttentionDims& d, const Mat& probs,
                                 const Mat& dout, Mat& dq, Mat& dk, Mat& dv);
void attention_backward(const Mat& q, const Mat& k, const Mat& v,
                        const AttentionDims& d, const Mat& probs,
                        const Mat& dout, Mat& dq, Mat& dk, Mat& dv);

}  // namespace kflab::nn
