#pragma once

#include <string>
#include <vector>

#include "macdiff/common.hpp"
#include "macdiff/mat.hpp"
#include "macdiff/skeleton.hpp"

namespace macdiff {

enum class MaskStrategy { random, temporal, tube, spatiotemporal, motion_aware };

const char* mask_strategy_name(MaskStrategy s);
MaskStrategy mask_strategy_from_name(const std::string& name);

struct MaskSpec {
  MaskStrategy strategy = MaskStrategy::random;
  double ratio = 0.9;
  int tube_length = 5;
  int keep_joints = 8;
  int keep_patches = 10;

  void validate(int patches, int joints) const;
};

// Kept/dropped indicator over the Tp x V token grid. kept_indices lists kept
// positions in row-major (temporal-major) order, the one canonical order.
struct Mask {
  int patches = 0;
  int joints = 0;
  std::vector<std::uint8_t> kept;  // Tp*V entries
  std::vector<int> kept_indices;

  int total() const { return patches * joints; }
  int kept_count() const { return static_cast<int>(kept_indices.size()); }
  bool is_kept(int p, int v) const { return kept[static_cast<std::size_t>(p) * joints + v] != 0; }

  static Mask all_kept(int patches, int joints);
  static Mask from_kept_flags(int patches, int joints, std::vector<std::uint8_t> flags);
};

// K = ceil((1-r) * Tp * V) for the ratio-driven strategies.
int kept_token_count(double ratio, int patches, int joints);

// Data-independent strategies. motion_aware requires token values; calling it
// through this overload is an error.
Mask make_mask(const MaskSpec& spec, int patches, int joints, Rng& rng);

// Full entry point: motion_aware samples kept tokens with probability
// proportional to softmax(per-token motion intensity), via Gumbel top-K.
Mask make_mask(const MaskSpec& spec, const TokenGrid& grid, Rng& rng);

// Gather kept token rows in row-major grid order: (Tp*V) x C -> K x C.
Mat apply_mask(const Mat& tokens, const Mask& m);

// Inverse of apply_mask on kept positions; masked rows receive `fill`.
Mat unshuffle(const Mat& values, const Mask& m, const std::vector<double>& fill);

}  // namespace macdiff
