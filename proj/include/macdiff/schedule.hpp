#pragma once

#include <string>
#include <vector>

#include "macdiff/common.hpp"
#include "macdiff/mat.hpp"

namespace macdiff {

enum class ScheduleKind { linear, cosine, inverse_cosine, blend };

const char* schedule_kind_name(ScheduleKind k);
ScheduleKind schedule_kind_from_name(const std::string& name);

// Forward-process tables. beta[t-1] is the step-t variance; alpha_bar[t] the
// cumulative signal retention with alpha_bar[0] = 1. The cumulative product
// identity alpha_bar[t] = prod(1 - beta_i) holds by construction.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::inverse_cosine;
  double tau = 0.0;                // only meaningful for blend
  int timesteps = 0;               // T
  std::vector<double> beta;        // size T, beta[t-1] = beta_t
  std::vector<double> alpha_bar;   // size T+1, alpha_bar[0] = 1

  double beta_at(int t) const;        // t in [1, T]
  double alpha_bar_at(int t) const;   // t in [0, T]
};

// linear:         beta linearly spaced 1e-4 -> 0.02
// cosine:         alpha_bar(u) = cos^2(u*pi/2)
// inverse_cosine: alpha_bar(u) = 1 - (2/pi) * arccos(sqrt(1-u))
// blend(tau):     ((1-tau)/2)*cosine + ((1+tau)/2)*inverse_cosine in
//                 alpha_bar space; tau=-1 and tau=+1 reproduce the pure
//                 schedules bit-exactly
// beta is recovered as 1 - alpha_bar_t/alpha_bar_{t-1}, clipped to
// [1e-8, 0.999], and alpha_bar is re-accumulated from the clipped betas.
NoiseSchedule build_schedule(ScheduleKind kind, int timesteps, double tau = 0.0);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps. t = 0 is the
// identity edge case.
Mat forward_diffuse(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& s);

// algebraic inversions of the same parameterization
Mat eps_from(const Mat& x0, const Mat& xt, int t, const NoiseSchedule& s);
Mat x0_from(const Mat& xt, const Mat& eps_hat, int t, const NoiseSchedule& s);

// alpha_bar_t / (1 - alpha_bar_t), strictly decreasing in t
double snr(int t, const NoiseSchedule& s);

// CSV dump (t, beta_t, alpha_bar_t, snr_t) for plotting
std::string schedule_csv(const NoiseSchedule& s);

}  // namespace macdiff
