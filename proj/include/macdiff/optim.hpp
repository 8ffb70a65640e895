#pragma once

#include <map>
#include <string>

#include "macdiff/mat.hpp"
#include "macdiff/model.hpp"

namespace macdiff {

// Cosine decay from lr_start to lr_end with linear warmup from 0 over the
// first 5% of steps.
double lr_at(long step, long total_steps, double lr_start, double lr_end);

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(std::map<std::string, Mat>& grads, double max_norm);

// Decoupled weight decay Adam. Weight decay applies only to rank-2 weight
// matrices (not biases, norms, positional embeddings, or the null token).
// Parameters and moments are snapped to the float32 grid after every update
// so float32 checkpoints reproduce training exactly.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long step_count() const { return step_; }

  void step(ParamStore& params, const std::map<std::string, Mat>& grads);

  // moments exposed for checkpointing, keyed "m.<tensor>" / "v.<tensor>"
  std::map<std::string, Mat>& state() { return state_; }
  const std::map<std::string, Mat>& state() const { return state_; }
  void restore(std::map<std::string, Mat> state, long step);

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long step_ = 0;
  std::map<std::string, Mat> state_;
};

// Plain SGD with momentum, used by the linear probe.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void set_lr(double lr) { lr_ = lr; }
  void step(ParamStore& params, const std::map<std::string, Mat>& grads);

 private:
  double lr_, momentum_;
  std::map<std::string, Mat> velocity_;
};

bool decays_weight(const std::string& name, const Mat& tensor);

}  // namespace macdiff
