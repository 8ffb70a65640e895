#include "macdiff/sampling.hpp"

#include <cmath>

namespace macdiff {

DenoiseFn model_denoiser(const ParamStore& params, const ModelConfig& cfg,
                         const ConditionTokens& cond) {
  if (params.tensors.empty()) throw ValueError("model_denoiser: no parameters loaded");
  return [&params, cfg, cond](const Mat& xt_tokens, int t) -> Mat {
    ag::Tape tape(false);
    Binding p = Binding::bind(tape, params, false);
    ag::Var c = tape.constant(cond.z);
    return decoder_forward(tape, p, xt_tokens, t, c, cfg)->value;
  };
}

std::vector<int> ddim_ladder(int timesteps, int num_steps) {
  if (num_steps < 1 || num_steps > timesteps)
    throw ValueError("ddim_ladder: num_steps must be in [1, T]");
  std::vector<int> ladder(num_steps + 1);
  for (int i = 0; i <= num_steps; ++i) {
    ladder[i] = static_cast<int>(std::llround(
        static_cast<double>(timesteps) * (num_steps - i) / num_steps));
  }
  for (int i = 0; i + 1 <= num_steps; ++i) {
    if (ladder[i] <= ladder[i + 1]) throw ValueError("ddim_ladder: ladder not decreasing");
  }
  return ladder;
}

Mat ddim_step(const Mat& xt, int t, int t_prev, const Mat& eps_hat,
              const NoiseSchedule& s) {
  if (!(t > t_prev && t_prev >= 0)) throw ValueError("ddim_step: need t > t_prev >= 0");
  const Mat x0_hat = x0_from(xt, eps_hat, t, s);
  return forward_diffuse(x0_hat, t_prev, eps_hat, s);
}

namespace {

Mat random_normal_like(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  for (auto& x : m.d) x = rng.normal();
  return m;
}

// ddim_step with the x0 inversion clamped to [-clip, clip]; identical to the
// plain update whenever the prediction already lies inside the band
Mat ddim_step_clipped(const Mat& xt, int t, int t_prev, const Mat& eps_hat,
                      const NoiseSchedule& s, double clip) {
  if (clip <= 0) return ddim_step(xt, t, t_prev, eps_hat, s);
  Mat x0_hat = x0_from(xt, eps_hat, t, s);
  for (auto& v : x0_hat.d) v = std::clamp(v, -clip, clip);
  return forward_diffuse(x0_hat, t_prev, eps_hat, s);
}

SkeletonSequence tokens_to_sequence(const Mat& tokens, const ModelConfig& cfg) {
  TokenGrid g;
  g.patches = cfg.patches();
  g.joints = cfg.joints;
  g.patch_len = cfg.patch_len;
  g.patch_dim = cfg.patch_dim();
  g.values = tokens;
  return unpatchify(g);
}

}  // namespace

std::vector<SkeletonSequence> sample_with(int n, const DenoiseFn& denoise,
                                          const ModelConfig& cfg, const NoiseSchedule& s,
                                          const SamplerConfig& sampler,
                                          const NormalizationStats& stats, Rng& rng) {
  const auto ladder = ddim_ladder(s.timesteps, sampler.num_steps);
  std::vector<SkeletonSequence> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Mat x = random_normal_like(cfg.tokens(), cfg.patch_dim(), rng);
    for (std::size_t k = 0; k + 1 < ladder.size(); ++k) {
      const Mat eps_hat = denoise(x, ladder[k]);
      x = ddim_step_clipped(x, ladder[k], ladder[k + 1], eps_hat, s, sampler.clip_x0);
    }
    if (!x.finite()) throw NumericError("sample: non-finite output");
    out.push_back(denormalize(tokens_to_sequence(x, cfg), stats));
  }
  return out;
}

std::vector<SkeletonSequence> sample(int n, const ParamStore& params,
                                     const ModelConfig& cfg, const NoiseSchedule& s,
                                     const SamplerConfig& sampler,
                                     const NormalizationStats& stats,
                                     const ConditionTokens* cond, Rng& rng) {
  const ConditionTokens c = cond ? *cond : null_condition(params, cfg);
  return sample_with(n, model_denoiser(params, cfg, c), cfg, s, sampler, stats, rng);
}

namespace {

// token-layout flags matching a (frame, joint) observation grid
std::vector<std::uint8_t> observed_token_entries(const std::vector<std::uint8_t>& observed,
                                                 const ModelConfig& cfg) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(cfg.tokens()) * cfg.patch_dim(), 0);
  for (int p = 0; p < cfg.patches(); ++p) {
    for (int v = 0; v < cfg.joints; ++v) {
      const std::size_t row = static_cast<std::size_t>(p) * cfg.joints + v;
      for (int f = 0; f < cfg.patch_len; ++f) {
        const int frame = p * cfg.patch_len + f;
        const bool obs = observed[static_cast<std::size_t>(frame) * cfg.joints + v] != 0;
        for (int ch = 0; ch < 3; ++ch)
          flags[row * cfg.patch_dim() + f * 3 + ch] = obs ? 1 : 0;
      }
    }
  }
  return flags;
}

// encoder mask over tokens: prefer fully observed tokens, fall back to any
Mask encoder_mask_from_observed(const std::vector<std::uint8_t>& observed,
                                const ModelConfig& cfg) {
  std::vector<std::uint8_t> full(static_cast<std::size_t>(cfg.tokens()), 0);
  std::vector<std::uint8_t> any(full.size(), 0);
  for (int p = 0; p < cfg.patches(); ++p) {
    for (int v = 0; v < cfg.joints; ++v) {
      bool all_obs = true, any_obs = false;
      for (int f = 0; f < cfg.patch_len; ++f) {
        const int frame = p * cfg.patch_len + f;
        const bool obs = observed[static_cast<std::size_t>(frame) * cfg.joints + v] != 0;
        all_obs &= obs;
        any_obs |= obs;
      }
      full[static_cast<std::size_t>(p) * cfg.joints + v] = all_obs ? 1 : 0;
      any[static_cast<std::size_t>(p) * cfg.joints + v] = any_obs ? 1 : 0;
    }
  }
  for (auto f : full)
    if (f) return Mask::from_kept_flags(cfg.patches(), cfg.joints, full);
  return Mask::from_kept_flags(cfg.patches(), cfg.joints, any);
}

}  // namespace

SkeletonSequence inpaint_with(const SkeletonSequence& x_occluded,
                              const std::vector<std::uint8_t>& observed,
                              const DenoiseFn& denoise, const ModelConfig& cfg,
                              const NoiseSchedule& s, const InpaintConfig& icfg,
                              const NormalizationStats& stats, Rng& rng) {
  if (x_occluded.frames != cfg.frames || x_occluded.joints != cfg.joints)
    throw ShapeError("inpaint: sequence shape does not match config");
  if (observed.size() != static_cast<std::size_t>(cfg.frames) * cfg.joints)
    throw ShapeError("inpaint: observation grid shape mismatch");
  bool any_obs = false;
  for (auto o : observed) any_obs |= (o != 0);
  if (!any_obs) throw ValueError("inpaint: empty observed region");
  if (icfg.resample_count < 1) throw ValueError("inpaint: resample_count must be >= 1");

  const Mat known = patchify(normalize(x_occluded, stats), cfg.patch_len).values;
  const auto entry_obs = observed_token_entries(observed, cfg);
  const auto ladder = ddim_ladder(s.timesteps, icfg.num_steps);

  Mat x = random_normal_like(cfg.tokens(), cfg.patch_dim(), rng);
  for (std::size_t k = 0; k + 1 < ladder.size(); ++k) {
    const int t = ladder[k], t_prev = ladder[k + 1];
    for (int r = 0; r < icfg.resample_count; ++r) {
      const Mat eps_hat = denoise(x, t);
      Mat x_prev = ddim_step_clipped(x, t, t_prev, eps_hat, s, icfg.clip_x0);
      const Mat known_noised = forward_diffuse(known, t_prev, random_normal_like(known.rows, known.cols, rng), s);
      for (std::size_t i = 0; i < x_prev.size(); ++i)
        if (entry_obs[i]) x_prev.d[i] = known_noised.d[i];
      if (r + 1 < icfg.resample_count) {
        // renoise back to level t for another resampling pass
        const double ratio = s.alpha_bar_at(t) / s.alpha_bar_at(t_prev);
        const Mat fresh = random_normal_like(x_prev.rows, x_prev.cols, rng);
        for (std::size_t i = 0; i < x.size(); ++i)
          x.d[i] = std::sqrt(ratio) * x_prev.d[i] + std::sqrt(1.0 - ratio) * fresh.d[i];
      } else {
        x = std::move(x_prev);
      }
    }
  }
  if (!x.finite()) throw NumericError("inpaint: non-finite output");

  SkeletonSequence out = denormalize(tokens_to_sequence(x, cfg), stats);
  out.label = x_occluded.label;
  // the observed region is the input, bit-exactly
  for (int t = 0; t < cfg.frames; ++t)
    for (int v = 0; v < cfg.joints; ++v)
      if (observed[static_cast<std::size_t>(t) * cfg.joints + v])
        for (int c = 0; c < 3; ++c) out.at(t, v, c) = x_occluded.at(t, v, c);
  return out;
}

SkeletonSequence inpaint(const SkeletonSequence& x_occluded,
                         const std::vector<std::uint8_t>& observed,
                         const ParamStore& params, const ModelConfig& cfg,
                         const NoiseSchedule& s, const InpaintConfig& icfg,
                         const NormalizationStats& stats, Rng& rng) {
  const TokenGrid grid = patchify(normalize(x_occluded, stats), cfg.patch_len);
  const Mask enc_mask = encoder_mask_from_observed(observed, cfg);
  const ConditionTokens cond =
      encode_condition(params, cfg, grid, enc_mask, ConditionMode::global_only);
  return inpaint_with(x_occluded, observed, model_denoiser(params, cfg, cond), cfg, s,
                      icfg, stats, rng);
}

SkeletonSequence one_step_denoise_with(const SkeletonSequence& x0_labeled,
                                       const DenoiseFn& denoise, const ModelConfig& cfg,
                                       const NoiseSchedule& s, int t_s,
                                       const NormalizationStats& stats, Rng& rng) {
  if (t_s < 1 || t_s > s.timesteps) throw ValueError("one_step_denoise: t_s out of range");
  const Mat x0 = patchify(normalize(x0_labeled, stats), cfg.patch_len).values;
  const Mat eps = random_normal_like(x0.rows, x0.cols, rng);
  const Mat xt = forward_diffuse(x0, t_s, eps, s);
  const Mat eps_hat = denoise(xt, t_s);
  const Mat x0_hat = x0_from(xt, eps_hat, t_s, s);
  SkeletonSequence out = denormalize(tokens_to_sequence(x0_hat, cfg), stats);
  out.label = x0_labeled.label;
  return out;
}

SkeletonSequence one_step_denoise(const SkeletonSequence& x0_labeled,
                                  const ParamStore& params, const ModelConfig& cfg,
                                  const NoiseSchedule& s, int t_s,
                                  const NormalizationStats& stats, Rng& rng) {
  // representation of the clean labeled sample, full token grid (no masking)
  const TokenGrid grid = patchify(normalize(x0_labeled, stats), cfg.patch_len);
  const ConditionTokens cond = encode_condition(params, cfg, grid, ConditionMode::assembled);
  return one_step_denoise_with(x0_labeled, model_denoiser(params, cfg, cond), cfg, s, t_s,
                               stats, rng);
}

AugmentedSet build_augmented_set(const std::vector<SkeletonSequence>& labeled,
                                 double lambda, int t_s, const ParamStore& params,
                                 const ModelConfig& cfg, const NoiseSchedule& s,
                                 const NormalizationStats& stats, Rng& rng) {
  if (lambda < 0) throw ValueError("build_augmented_set: lambda must be >= 0");
  AugmentedSet out;
  if (labeled.empty() || lambda == 0.0) return out;
  const int n_aug = static_cast<int>(std::ceil(lambda * static_cast<double>(labeled.size())));
  out.samples.reserve(n_aug);
  out.source_index.reserve(n_aug);
  for (int i = 0; i < n_aug; ++i) {
    const int src = static_cast<int>(rng.uniform_int(labeled.size()));
    out.samples.push_back(one_step_denoise(labeled[src], params, cfg, s, t_s, stats, rng));
    out.source_index.push_back(src);
  }
  return out;
}

}  // namespace macdiff
