#include "macdiff/masking.hpp"

#include <algorithm>
#include <cmath>

namespace macdiff {

const char* mask_strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::random: return "random";
    case MaskStrategy::temporal: return "temporal";
    case MaskStrategy::tube: return "tube";
    case MaskStrategy::spatiotemporal: return "spatiotemporal";
    case MaskStrategy::motion_aware: return "motion_aware";
  }
  return "?";
}

MaskStrategy mask_strategy_from_name(const std::string& name) {
  for (MaskStrategy s : {MaskStrategy::random, MaskStrategy::temporal, MaskStrategy::tube,
                         MaskStrategy::spatiotemporal, MaskStrategy::motion_aware}) {
    if (name == mask_strategy_name(s)) return s;
  }
  throw ConfigError("unknown mask strategy: " + name);
}

void MaskSpec::validate(int patches, int joints) const {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ValueError("MaskSpec: ratio must be in [0, 1)");
  if (tube_length < 1) throw ValueError("MaskSpec: tube_length must be >= 1");
  if (strategy == MaskStrategy::spatiotemporal) {
    if (keep_joints < 1 || keep_joints > joints)
      throw ValueError("MaskSpec: keep_joints out of range");
    if (keep_patches < 1 || keep_patches > patches)
      throw ValueError("MaskSpec: keep_patches out of range");
  }
}

Mask Mask::all_kept(int patches, int joints) {
  Mask m;
  m.patches = patches;
  m.joints = joints;
  m.kept.assign(static_cast<std::size_t>(patches) * joints, 1);
  m.kept_indices.resize(static_cast<std::size_t>(patches) * joints);
  for (int i = 0; i < patches * joints; ++i) m.kept_indices[i] = i;
  return m;
}

Mask Mask::from_kept_flags(int patches, int joints, std::vector<std::uint8_t> flags) {
  if (static_cast<int>(flags.size()) != patches * joints)
    throw ShapeError("Mask::from_kept_flags: flag count mismatch");
  Mask m;
  m.patches = patches;
  m.joints = joints;
  m.kept = std::move(flags);
  for (int i = 0; i < patches * joints; ++i)
    if (m.kept[i]) m.kept_indices.push_back(i);
  if (m.kept_indices.empty()) throw ValueError("Mask: no kept tokens");
  return m;
}

int kept_token_count(double ratio, int patches, int joints) {
  const int total = patches * joints;
  const int k = static_cast<int>(std::ceil((1.0 - ratio) * total));
  if (k <= 0) throw ValueError("kept_token_count: masking ratio leaves no tokens");
  return std::min(k, total);
}

namespace {

Mask from_kept_list(int patches, int joints, const std::vector<int>& kept_list) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(patches) * joints, 0);
  for (int i : kept_list) flags[i] = 1;
  return Mask::from_kept_flags(patches, joints, std::move(flags));
}

Mask make_random(int patches, int joints, int k, Rng& rng) {
  return from_kept_list(patches, joints, rng.sample_without_replacement(patches * joints, k));
}

Mask make_temporal(int patches, int joints, double ratio, Rng& rng) {
  const int keep_p = std::max(1, static_cast<int>(std::ceil((1.0 - ratio) * patches)));
  const auto kept_patches = rng.sample_without_replacement(patches, keep_p);
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(patches) * joints, 0);
  for (int p : kept_patches)
    for (int v = 0; v < joints; ++v) flags[static_cast<std::size_t>(p) * joints + v] = 1;
  return Mask::from_kept_flags(patches, joints, std::move(flags));
}

// Draws (joint, start) tubes of tube_length consecutive patches until the
// target masked count is reached; the final tube is truncated at the target.
Mask make_tube(int patches, int joints, double ratio, int tube_length, Rng& rng) {
  const int total = patches * joints;
  const int k = kept_token_count(ratio, patches, joints);
  const int need_masked = total - k;
  std::vector<std::uint8_t> masked(static_cast<std::size_t>(total), 0);
  int have = 0;
  long attempts = 0;
  const long max_attempts = 1000L * total + 1000;
  while (have < need_masked && attempts < max_attempts) {
    ++attempts;
    const int v = static_cast<int>(rng.uniform_int(joints));
    const int start = static_cast<int>(rng.uniform_int(patches));
    for (int p = start; p < std::min(start + tube_length, patches) && have < need_masked; ++p) {
      auto& cell = masked[static_cast<std::size_t>(p) * joints + v];
      if (!cell) {
        cell = 1;
        ++have;
      }
    }
  }
  // overlap-heavy corner: finish deterministically from the rng stream
  while (have < need_masked) {
    const int i = static_cast<int>(rng.uniform_int(total));
    if (!masked[i]) {
      masked[i] = 1;
      ++have;
    }
  }
  std::vector<std::uint8_t> flags(masked.size());
  for (std::size_t i = 0; i < masked.size(); ++i) flags[i] = masked[i] ? 0 : 1;
  return Mask::from_kept_flags(patches, joints, std::move(flags));
}

Mask make_spatiotemporal(int patches, int joints, int keep_joints, int keep_patches, Rng& rng) {
  const auto vs = rng.sample_without_replacement(joints, keep_joints);
  const auto ps = rng.sample_without_replacement(patches, keep_patches);
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(patches) * joints, 0);
  for (int p : ps)
    for (int v : vs) flags[static_cast<std::size_t>(p) * joints + v] = 1;
  return Mask::from_kept_flags(patches, joints, std::move(flags));
}

// mean absolute frame-to-frame difference inside the token's patch
std::vector<double> motion_intensity(const TokenGrid& g) {
  std::vector<double> intensity(static_cast<std::size_t>(g.patches) * g.joints, 0.0);
  if (g.patch_len < 2) return intensity;
  for (int i = 0; i < g.patches * g.joints; ++i) {
    const double* row = &g.values.at(i, 0);
    double acc = 0;
    for (int f = 0; f + 1 < g.patch_len; ++f)
      for (int c = 0; c < 3; ++c) acc += std::abs(row[(f + 1) * 3 + c] - row[f * 3 + c]);
    intensity[i] = acc / (3.0 * (g.patch_len - 1));
  }
  return intensity;
}

// Sampling without replacement with probability proportional to
// softmax(intensity): Gumbel top-K over the logits.
Mask make_motion_aware(const TokenGrid& g, int k, Rng& rng) {
  const auto intensity = motion_intensity(g);
  const int total = static_cast<int>(intensity.size());
  std::vector<std::pair<double, int>> keyed(total);
  for (int i = 0; i < total; ++i) {
    const double u = std::max(rng.uniform(), 1e-300);
    const double gumbel = -std::log(-std::log(u));
    keyed[i] = {intensity[i] + gumbel, i};
  }
  std::partial_sort(keyed.begin(), keyed.begin() + k, keyed.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<int> kept_list(k);
  for (int i = 0; i < k; ++i) kept_list[i] = keyed[i].second;
  return from_kept_list(g.patches, g.joints, kept_list);
}

}  // namespace

Mask make_mask(const MaskSpec& spec, int patches, int joints, Rng& rng) {
  spec.validate(patches, joints);
  switch (spec.strategy) {
    case MaskStrategy::random:
      return make_random(patches, joints, kept_token_count(spec.ratio, patches, joints), rng);
    case MaskStrategy::temporal:
      return make_temporal(patches, joints, spec.ratio, rng);
    case MaskStrategy::tube:
      return make_tube(patches, joints, spec.ratio, spec.tube_length, rng);
    case MaskStrategy::spatiotemporal:
      return make_spatiotemporal(patches, joints, spec.keep_joints, spec.keep_patches, rng);
    case MaskStrategy::motion_aware:
      throw ValueError("make_mask: motion_aware requires token values");
  }
  throw ValueError("make_mask: unknown strategy");
}

Mask make_mask(const MaskSpec& spec, const TokenGrid& grid, Rng& rng) {
  if (spec.strategy == MaskStrategy::motion_aware) {
    spec.validate(grid.patches, grid.joints);
    return make_motion_aware(grid, kept_token_count(spec.ratio, grid.patches, grid.joints), rng);
  }
  return make_mask(spec, grid.patches, grid.joints, rng);
}

Mat apply_mask(const Mat& tokens, const Mask& m) {
  if (tokens.rows != m.total())
    throw ShapeError("apply_mask: token rows do not match mask grid");
  Mat out(m.kept_count(), tokens.cols);
  for (int i = 0; i < m.kept_count(); ++i) {
    const double* src = &tokens.at(m.kept_indices[i], 0);
    std::copy(src, src + tokens.cols, &out.at(i, 0));
  }
  return out;
}

Mat unshuffle(const Mat& values, const Mask& m, const std::vector<double>& fill) {
  if (values.rows != m.kept_count())
    throw ShapeError("unshuffle: row count does not match mask kept count");
  if (static_cast<int>(fill.size()) != values.cols)
    throw ShapeError("unshuffle: fill dimension mismatch");
  Mat out(m.total(), values.cols);
  for (int i = 0; i < m.total(); ++i)
    std::copy(fill.begin(), fill.end(), &out.at(i, 0));
  for (int i = 0; i < m.kept_count(); ++i) {
    const double* src = &values.at(i, 0);
    std::copy(src, src + values.cols, &out.at(m.kept_indices[i], 0));
  }
  return out;
}

}  // namespace macdiff
