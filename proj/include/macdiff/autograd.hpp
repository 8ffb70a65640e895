#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "macdiff/common.hpp"
#include "macdiff/masking.hpp"
#include "macdiff/mat.hpp"

namespace macdiff::ag {

class Tape;

// One recorded value in the computation graph. Nodes live in the tape's deque
// (stable addresses); Var is a raw pointer into it.
struct Node {
  Mat value;
  Mat grad;  // same shape as value, allocated when gradients are enabled
  bool requires_grad = false;
  std::function<void(Node&)> backward;  // accumulates into parents' grads
};

using Var = Node*;

// Reverse-mode tape. Ops append nodes in forward order; backward() walks the
// deque in reverse, which is a valid topological order by construction. A
// tape built with gradients disabled records values only.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var leaf(const Mat& value, bool requires_grad);
  Var constant(Mat value) { return leaf(value, false); }

  // d(loss)/d(node) for every node; loss must be 1x1. Single use per tape.
  void backward(Var loss);

  // --- elementwise / broadcast ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double c);
  Var add_rowvec(Var x, Var r);  // x (n x C) + broadcast r (1 x C)
  Var mul_rowvec(Var x, Var r);
  Var gelu(Var x);

  // --- linear algebra ---
  Var matmul(Var a, Var b);
  Var linear(Var x, Var w, Var b);  // x*w + broadcast bias (1 x K)

  // --- normalization / attention ---
  Var layernorm(Var x);                     // row-wise, no affine
  Var layernorm_affine(Var x, Var g, Var b);
  Var attention(Var q, Var k, Var v, int heads);  // softmax(QK^T/sqrt(d))V per head

  // --- structure ---
  Var slice_cols(Var x, int c0, int c1);
  Var gather_rows(Var x, const std::vector<int>& indices);
  Var broadcast_row(Var r, int rows);
  Var mean_rows(Var x);  // 1 x C column mean
  // kept rows from z_local (in mask order), masked rows all z_global
  Var assemble_rows(Var z_local, Var z_global, const Mask& mask);
  Var sum(Var x);  // 1 x 1

  // --- losses (1 x 1 outputs) ---
  Var mse(Var pred, const Mat& target);                  // mean squared error
  Var cross_entropy(Var logits, const std::vector<int>& labels);

 private:
  Var make(Mat value, std::initializer_list<Var> parents,
           std::function<void(Node&)>&& bw);

  std::deque<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// LayerNorm variance epsilon, shared by every normalization in the project.
constexpr double kLayerNormEps = 1e-5;

}  // namespace macdiff::ag
