#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "kflab/kernels.hpp"
#include "kflab/mat.hpp"

namespace kflab::nn {

// Reverse-mode tape over Mat. A fresh tape is built per batch; parameters
// enter as leaves and their gradients are read back after backward().
// Heavy ops route through kernels.hpp so they inherit the serial/parallel
// switch.
class Tape {
 public:
  int leaf(Mat m);

  int matmul(int a, int b);
  int add(int a, int b);                 // same shape
  int sub(int a, int b);                 // same shape
  int add_rowvec(int a, int b);          // b: 1 x cols, broadcast over rows
  int add_tiled_rows(int a, int p, int reps);  // p tiled `reps` times down a
  int scale(int a, double s);
  int silu(int a);
  int layernorm(int a, int gain, int bias);  // rowwise, eps 1e-5
  int attention(int q, int k, int v, const AttentionDims& dims,
                std::vector<uint8_t> key_pad);
  // out[dst[i]] = val(part)[i]; parts must tile [0, total_rows) exactly.
  int compose_rows(int total_rows, int cols,
                   const std::vector<std::pair<int, std::vector<int>>>& parts);
  int gather_rows(int a, std::vector<int> idx);
  // one output row per group: mean of the listed input rows
  int group_mean_rows(int a, std::vector<std::vector<int>> groups);
  int dropout(int a, double drop_prob, uint64_t seed);  // no-op when prob 0

  // losses (1x1 outputs)
  int mse(int pred, const Mat& target);             // mean over all entries
  int softmax_xent(int logits, std::vector<int> labels);  // mean CE over rows

  void backward(int loss);

  const Mat& val(int id) const { return nodes_[id].val; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  double scalar(int id) const { return nodes_[id].val.a[0]; }

  // Row-wise softmax probabilities for a logits node (forward only).
  static Mat softmax_rows(const Mat& logits);

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;  // empty for leaves
  };
  int push(Mat val, std::function<void()> back = {});
  std::vector<Node> nodes_;
};

}  // namespace kflab::nn
