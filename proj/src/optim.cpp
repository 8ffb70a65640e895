#include "macdiff/optim.hpp"

#include <cmath>

namespace macdiff {

double lr_at(long step, long total_steps, double lr_start, double lr_end) {
  if (!(lr_start >= lr_end && lr_end > 0))
    throw ConfigError("lr_at: need lr_start >= lr_end > 0");
  if (step < 0 || step > total_steps) throw ValueError("lr_at: step out of range");
  if (total_steps == 0) return lr_end;
  const long warmup = std::max<long>(1, static_cast<long>(std::ceil(0.05 * total_steps)));
  if (step <= warmup)
    return lr_start * static_cast<double>(step) / static_cast<double>(warmup);
  const double u = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(M_PI * u));
}

double clip_grad_norm(std::map<std::string, Mat>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [name, g] : grads)
    for (double x : g.d) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g.d) x *= s;
  }
  return norm;
}

bool decays_weight(const std::string& name, const Mat& tensor) {
  if (tensor.rows <= 1) return false;  // biases, gains, null token
  if (name.find(".pos.") != std::string::npos) return false;
  return true;
}

void AdamW::step(ParamStore& params, const std::map<std::string, Mat>& grads) {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (auto& [name, p] : params.tensors) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // frozen or unused tensor
    const Mat& g = git->second;
    if (!g.same_shape(p)) throw ShapeError("AdamW: gradient shape mismatch for " + name);
    Mat& m = state_.try_emplace("m." + name, Mat(p.rows, p.cols)).first->second;
    Mat& v = state_.try_emplace("v." + name, Mat(p.rows, p.cols)).first->second;
    const bool decay = decays_weight(name, p) && weight_decay_ > 0;
    for (std::size_t i = 0; i < p.d.size(); ++i) {
      m.d[i] = beta1_ * m.d[i] + (1.0 - beta1_) * g.d[i];
      v.d[i] = beta2_ * v.d[i] + (1.0 - beta2_) * g.d[i] * g.d[i];
      const double mhat = m.d[i] / bc1;
      const double vhat = v.d[i] / bc2;
      double upd = mhat / (std::sqrt(vhat) + eps_);
      if (decay) upd += weight_decay_ * p.d[i];
      p.d[i] -= lr_ * upd;
    }
    m.quantize_f32();
    v.quantize_f32();
    p.quantize_f32();
  }
}

void AdamW::restore(std::map<std::string, Mat> state, long step) {
  state_ = std::move(state);
  step_ = step;
}

void SgdMomentum::step(ParamStore& params, const std::map<std::string, Mat>& grads) {
  for (auto& [name, p] : params.tensors) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Mat& g = git->second;
    if (!g.same_shape(p)) throw ShapeError("SgdMomentum: gradient shape mismatch for " + name);
    Mat& vel = velocity_.try_emplace(name, Mat(p.rows, p.cols)).first->second;
    for (std::size_t i = 0; i < p.d.size(); ++i) {
      vel.d[i] = momentum_ * vel.d[i] + g.d[i];
      p.d[i] -= lr_ * vel.d[i];
    }
  }
}

}  // namespace macdiff
