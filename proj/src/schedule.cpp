#include "macdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace macdiff {

const char* schedule_kind_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::inverse_cosine: return "inverse_cosine";
    case ScheduleKind::blend: return "blend";
  }
  return "?";
}

ScheduleKind schedule_kind_from_name(const std::string& name) {
  for (ScheduleKind k : {ScheduleKind::linear, ScheduleKind::cosine,
                         ScheduleKind::inverse_cosine, ScheduleKind::blend}) {
    if (name == schedule_kind_name(k)) return k;
  }
  throw ConfigError("unknown schedule kind: " + name);
}

double NoiseSchedule::beta_at(int t) const {
  if (t < 1 || t > timesteps) throw ValueError("beta_at: t out of range");
  return beta[t - 1];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t < 0 || t > timesteps) throw ValueError("alpha_bar_at: t out of range");
  return alpha_bar[t];
}

namespace {

constexpr double kBetaMin = 1e-8;
constexpr double kBetaMax = 0.999;

double alpha_bar_cosine(double u) {
  const double c = std::cos(u * M_PI / 2.0);
  return c * c;
}

double alpha_bar_inverse_cosine(double u) {
  return 1.0 - (2.0 / M_PI) * std::acos(std::sqrt(1.0 - u));
}

// tau = -1 gives weights (1, 0) and tau = +1 gives (0, 1); with IEEE
// arithmetic 1*a + 0*b == a, so the endpoints match the pure tables exactly
double alpha_bar_blend(double u, double tau) {
  const double wc = (1.0 - tau) / 2.0;
  const double wi = (1.0 + tau) / 2.0;
  return wc * alpha_bar_cosine(u) + wi * alpha_bar_inverse_cosine(u);
}

}  // namespace

NoiseSchedule build_schedule(ScheduleKind kind, int timesteps, double tau) {
  if (timesteps < 2) throw ValueError("build_schedule: need at least 2 timesteps");
  if (!(tau >= -1.0 && tau <= 1.0)) throw ValueError("build_schedule: tau must be in [-1, 1]");

  NoiseSchedule s;
  s.kind = kind;
  s.tau = (kind == ScheduleKind::blend) ? tau : 0.0;
  s.timesteps = timesteps;
  s.beta.resize(timesteps);
  s.alpha_bar.resize(timesteps + 1);
  s.alpha_bar[0] = 1.0;

  if (kind == ScheduleKind::linear) {
    const double b0 = 1e-4, b1 = 0.02;
    for (int t = 1; t <= timesteps; ++t) {
      const double b = b0 + (b1 - b0) * static_cast<double>(t - 1) / (timesteps - 1);
      s.beta[t - 1] = std::clamp(b, kBetaMin, kBetaMax);
      s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t - 1]);
    }
    return s;
  }

  auto target = [&](double u) {
    switch (kind) {
      case ScheduleKind::cosine: return alpha_bar_cosine(u);
      case ScheduleKind::inverse_cosine: return alpha_bar_inverse_cosine(u);
      case ScheduleKind::blend: return alpha_bar_blend(u, tau);
      default: throw ValueError("build_schedule: unexpected kind");
    }
  };
  for (int t = 1; t <= timesteps; ++t) {
    const double want = target(static_cast<double>(t) / timesteps);
    double b = 1.0 - want / s.alpha_bar[t - 1];
    b = std::clamp(b, kBetaMin, kBetaMax);
    s.beta[t - 1] = b;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - b);
  }
  return s;
}

namespace {

Mat affine_combine(const Mat& a, double wa, const Mat& b, double wb, const char* ctx) {
  if (!a.same_shape(b)) throw ShapeError(std::string(ctx) + ": shape mismatch");
  Mat out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.size(); ++i) out.d[i] = wa * a.d[i] + wb * b.d[i];
  return out;
}

}  // namespace

Mat forward_diffuse(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& s) {
  if (t < 0 || t > s.timesteps) throw ValueError("forward_diffuse: t out of range");
  const double ab = s.alpha_bar_at(t);
  return affine_combine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab), "forward_diffuse");
}

Mat eps_from(const Mat& x0, const Mat& xt, int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.timesteps) throw ValueError("eps_from: t out of range");
  const double ab = s.alpha_bar_at(t);
  if (!(ab < 1.0)) throw NumericError("eps_from: alpha_bar = 1 (division by zero)");
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  return affine_combine(xt, inv, x0, -std::sqrt(ab) * inv, "eps_from");
}

Mat x0_from(const Mat& xt, const Mat& eps_hat, int t, const NoiseSchedule& s) {
  if (t < 0 || t > s.timesteps) throw ValueError("x0_from: t out of range");
  const double ab = s.alpha_bar_at(t);
  const double inv = 1.0 / std::sqrt(ab);
  return affine_combine(xt, inv, eps_hat, -std::sqrt(1.0 - ab) * inv, "x0_from");
}

double snr(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.timesteps) throw ValueError("snr: t out of range");
  const double ab = s.alpha_bar_at(t);
  return ab / (1.0 - ab);
}

std::string schedule_csv(const NoiseSchedule& s) {
  std::ostringstream os;
  os << "t,beta,alpha_bar,snr\n";
  os.precision(17);
  for (int t = 1; t <= s.timesteps; ++t) {
    os << t << "," << s.beta_at(t) << "," << s.alpha_bar_at(t) << "," << snr(t, s) << "\n";
  }
  return os.str();
}

}  // namespace macdiff
