#pragma once

#include <functional>
#include <vector>

#include "macdiff/model.hpp"
#include "macdiff/schedule.hpp"
#include "macdiff/skeleton.hpp"

namespace macdiff {

// Noise predictor over token-layout tensors; the condition is baked into the
// closure. Tests substitute oracles here.
using DenoiseFn = std::function<Mat(const Mat& xt_tokens, int t)>;

DenoiseFn model_denoiser(const ParamStore& params, const ModelConfig& cfg,
                         const ConditionTokens& cond);

struct SamplerConfig {
  int num_steps = 50;  // sub-sampled timestep ladder
  // eta is fixed at 0 (deterministic DDIM) in this artifact

  // The x0 prediction is clamped to this band (normalized units) inside the
  // samplers; near t = T the schedule leaves alpha_bar ~ 0 and the inversion
  // would otherwise amplify model error without bound. 0 disables.
  double clip_x0 = 6.0;
};

// strictly decreasing ladder T = t_0 > t_1 > ... > t_num_steps = 0
std::vector<int> ddim_ladder(int timesteps, int num_steps);

// deterministic DDIM update (eta = 0):
//   x0_hat = x0_from(x_t, eps_hat, t)
//   x_prev = sqrt(ab_prev) * x0_hat + sqrt(1 - ab_prev) * eps_hat
Mat ddim_step(const Mat& xt, int t, int t_prev, const Mat& eps_hat,
              const NoiseSchedule& s);

// Generation from pure noise down the ladder, in normalized token space;
// outputs are denormalized sequences. Null condition when cond == nullptr.
std::vector<SkeletonSequence> sample(int n, const ParamStore& params,
                                     const ModelConfig& cfg, const NoiseSchedule& s,
                                     const SamplerConfig& sampler,
                                     const NormalizationStats& stats,
                                     const ConditionTokens* cond, Rng& rng);

// harness variant with an injected denoiser
std::vector<SkeletonSequence> sample_with(int n, const DenoiseFn& denoise,
                                          const ModelConfig& cfg, const NoiseSchedule& s,
                                          const SamplerConfig& sampler,
                                          const NormalizationStats& stats, Rng& rng);

struct InpaintConfig {
  int num_steps = 50;
  int resample_count = 1;  // 1 = plain known-region replacement
  double clip_x0 = 6.0;
};

// Diffusion inpainting: after every ladder step the observed region is
// overwritten with a fresh forward diffusion of the known data; at t = 0 the
// observed entries are copied from the input exactly. The condition comes
// from encoding the fully observed tokens with global-only conditioning.
SkeletonSequence inpaint(const SkeletonSequence& x_occluded,
                         const std::vector<std::uint8_t>& observed,
                         const ParamStore& params, const ModelConfig& cfg,
                         const NoiseSchedule& s, const InpaintConfig& icfg,
                         const NormalizationStats& stats, Rng& rng);

// harness variant: explicit condition + denoiser
SkeletonSequence inpaint_with(const SkeletonSequence& x_occluded,
                              const std::vector<std::uint8_t>& observed,
                              const DenoiseFn& denoise, const ModelConfig& cfg,
                              const NoiseSchedule& s, const InpaintConfig& icfg,
                              const NormalizationStats& stats, Rng& rng);

// Representation-guided augmentation: diffuse the sample to t_s, predict the
// noise once conditioned on the clean sample's representation, invert to
// x0_hat. The label carries over.
SkeletonSequence one_step_denoise(const SkeletonSequence& x0_labeled,
                                  const ParamStore& params, const ModelConfig& cfg,
                                  const NoiseSchedule& s, int t_s,
                                  const NormalizationStats& stats, Rng& rng);

SkeletonSequence one_step_denoise_with(const SkeletonSequence& x0_labeled,
                                       const DenoiseFn& denoise, const ModelConfig& cfg,
                                       const NoiseSchedule& s, int t_s,
                                       const NormalizationStats& stats, Rng& rng);

struct AugmentedSet {
  std::vector<SkeletonSequence> samples;
  std::vector<int> source_index;  // provenance: real sample each came from
};

// ceil(lambda * N) augmented samples, each a one-step denoise of a uniformly
// chosen real labeled sample.
AugmentedSet build_augmented_set(const std::vector<SkeletonSequence>& labeled,
                                 double lambda, int t_s, const ParamStore& params,
                                 const ModelConfig& cfg, const NoiseSchedule& s,
                                 const NormalizationStats& stats, Rng& rng);

}  // namespace macdiff
