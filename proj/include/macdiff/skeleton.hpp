#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "macdiff/common.hpp"
#include "macdiff/mat.hpp"

namespace macdiff {

constexpr std::uint32_t kUnlabeled = 0xFFFFFFFFu;

// A skeleton clip: frames x joints x 3 float32 coordinates in meters.
struct SkeletonSequence {
  int frames = 0;
  int joints = 0;
  std::vector<float> coords;  // row-major (frame, joint, xyz)
  std::uint32_t label = kUnlabeled;

  SkeletonSequence() = default;
  SkeletonSequence(int t, int v)
      : frames(t), joints(v), coords(static_cast<std::size_t>(t) * v * 3, 0.0f) {}

  float& at(int t, int v, int c) {
    return coords[(static_cast<std::size_t>(t) * joints + v) * 3 + c];
  }
  const float& at(int t, int v, int c) const {
    return coords[(static_cast<std::size_t>(t) * joints + v) * 3 + c];
  }
  bool has_label() const { return label != kUnlabeled; }
};

struct NormalizationStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stddev{1, 1, 1};
};

// Patchified token lattice: token (p, v) holds the flattened l x 3 block of
// joint v over frames [p*l, (p+1)*l). values has one row per token in
// row-major (temporal-major) order, the canonical order used everywhere.
struct TokenGrid {
  int patches = 0;      // Tp
  int joints = 0;       // V
  int patch_len = 0;    // l
  int patch_dim = 0;    // l*3
  Mat values;           // (Tp*V) x patch_dim
};

enum class OcclusionKind { frames, body_part };
enum class BodyPart { trunk, left_arm, right_arm, left_leg, right_leg };

struct OcclusionSpec {
  OcclusionKind kind = OcclusionKind::frames;
  int frame_start = 0;
  int frame_len = 0;
  BodyPart part = BodyPart::trunk;
};

// 25-joint layout (NTU-style indexing) partitioned into five disjoint,
// exhaustive body parts:
//   trunk     = {0 base spine, 1 mid spine, 2 neck, 3 head, 20 spine shoulder}
//   left_arm  = {4 shoulder, 5 elbow, 6 wrist, 7 hand, 21 hand tip, 22 thumb}
//   right_arm = {8 shoulder, 9 elbow, 10 wrist, 11 hand, 23 hand tip, 24 thumb}
//   left_leg  = {12 hip, 13 knee, 14 ankle, 15 foot}
//   right_leg = {16 hip, 17 knee, 18 ankle, 19 foot}
const std::vector<int>& body_part_joints(BodyPart part);
const char* body_part_name(BodyPart part);
std::optional<BodyPart> body_part_from_name(const std::string& name);

// --- statistics and normalization (per coordinate channel) ---

NormalizationStats compute_stats(const std::vector<SkeletonSequence>& dataset);
SkeletonSequence normalize(const SkeletonSequence& x, const NormalizationStats& s);
SkeletonSequence denormalize(const SkeletonSequence& x, const NormalizationStats& s);

// --- temporal resampling ---

// Picks a random contiguous segment of ceil(crop_ratio * frames) frames, then
// linearly interpolates it to exactly target_frames.
SkeletonSequence crop_resize(const SkeletonSequence& x, int target_frames,
                             double crop_ratio, Rng& rng);
// Deterministic variant used at evaluation time: full segment, no crop.
SkeletonSequence resize_frames(const SkeletonSequence& x, int target_frames);

// --- patchify ---

TokenGrid patchify(const SkeletonSequence& x, int patch_len);
SkeletonSequence unpatchify(const TokenGrid& g);

// --- augmentation ---

struct AugmentedViews {
  SkeletonSequence encoder_view;  // rotated + Gaussian noise
  SkeletonSequence clean_view;    // rotated only
};

// One random rotation (angles uniform in +-rotation_max about each axis,
// composed X*Y*Z) shared by both views; noise goes to the encoder view only.
AugmentedViews augment(const SkeletonSequence& x, double rotation_max,
                       double noise_sigma, Rng& rng);

// --- occlusion ---

struct Occlusion {
  SkeletonSequence occluded;             // masked entries zeroed
  std::vector<std::uint8_t> observed;    // frames x joints, 1 = surviving
};

Occlusion apply_occlusion(const SkeletonSequence& x, const OcclusionSpec& spec);

// --- synthetic data ---

// Labeled toy dataset: one standing template pose per sample plus a
// class-specific sinusoidal limb displacement (distinct limb, frequency,
// amplitude, axis per class) with per-sample phase and jitter.
std::vector<SkeletonSequence> synth_dataset(int n_classes, int n_per_class,
                                            int frames, int joints,
                                            std::uint64_t seed);

// --- sequence file format ---
// magic "SKL1", u32 LE frames, u32 LE joints, u32 LE label (0xFFFFFFFF =
// unlabeled), then frames*joints*3 float32 LE.

void save_sequence(const SkeletonSequence& x, const std::filesystem::path& path);
SkeletonSequence load_sequence(const std::filesystem::path& path);

// --- dataset directory: SKL1 files plus a JSON manifest ---

struct DatasetEntry {
  std::string file;   // relative to the dataset directory
  std::string split;  // "train" or "test"
};

struct Dataset {
  std::filesystem::path dir;
  std::vector<DatasetEntry> entries;
  NormalizationStats stats;
  int num_classes = 0;

  std::vector<SkeletonSequence> load_split(const std::string& split) const;
};

void save_dataset(const std::filesystem::path& dir,
                  const std::vector<SkeletonSequence>& train,
                  const std::vector<SkeletonSequence>& test, int num_classes);
Dataset open_dataset(const std::filesystem::path& dir);

}  // namespace macdiff
