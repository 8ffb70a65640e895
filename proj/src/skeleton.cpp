#include "macdiff/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace macdiff {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<int>& body_part_joints(BodyPart part) {
  static const std::vector<int> trunk = {0, 1, 2, 3, 20};
  static const std::vector<int> left_arm = {4, 5, 6, 7, 21, 22};
  static const std::vector<int> right_arm = {8, 9, 10, 11, 23, 24};
  static const std::vector<int> left_leg = {12, 13, 14, 15};
  static const std::vector<int> right_leg = {16, 17, 18, 19};
  switch (part) {
    case BodyPart::trunk: return trunk;
    case BodyPart::left_arm: return left_arm;
    case BodyPart::right_arm: return right_arm;
    case BodyPart::left_leg: return left_leg;
    case BodyPart::right_leg: return right_leg;
  }
  throw ValueError("body_part_joints: unknown part");
}

const char* body_part_name(BodyPart part) {
  switch (part) {
    case BodyPart::trunk: return "trunk";
    case BodyPart::left_arm: return "left_arm";
    case BodyPart::right_arm: return "right_arm";
    case BodyPart::left_leg: return "left_leg";
    case BodyPart::right_leg: return "right_leg";
  }
  return "?";
}

std::optional<BodyPart> body_part_from_name(const std::string& name) {
  for (BodyPart p : {BodyPart::trunk, BodyPart::left_arm, BodyPart::right_arm,
                     BodyPart::left_leg, BodyPart::right_leg}) {
    if (name == body_part_name(p)) return p;
  }
  return std::nullopt;
}

NormalizationStats compute_stats(const std::vector<SkeletonSequence>& dataset) {
  if (dataset.empty()) throw ValueError("compute_stats: empty dataset");
  std::array<double, 3> sum{0, 0, 0};
  std::array<double, 3> sumsq{0, 0, 0};
  std::size_t n = 0;
  for (const auto& x : dataset) {
    if (!all_finite(x.coords)) throw NumericError("compute_stats: non-finite input");
    for (std::size_t i = 0; i < x.coords.size(); ++i) {
      const double v = x.coords[i];
      sum[i % 3] += v;
      sumsq[i % 3] += v * v;
    }
    n += x.coords.size() / 3;
  }
  NormalizationStats s;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sumsq[c] / static_cast<double>(n) - mean * mean);
    s.mean[c] = mean;
    s.stddev[c] = std::max(std::sqrt(var), 1e-6);
  }
  return s;
}

SkeletonSequence normalize(const SkeletonSequence& x, const NormalizationStats& s) {
  if (!all_finite(x.coords)) throw NumericError("normalize: non-finite input");
  for (int c = 0; c < 3; ++c) {
    if (!(s.stddev[c] > 0)) throw ValueError("normalize: stddev must be positive");
  }
  SkeletonSequence out = x;
  for (std::size_t i = 0; i < out.coords.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    out.coords[i] = static_cast<float>((static_cast<double>(out.coords[i]) - s.mean[c]) / s.stddev[c]);
  }
  return out;
}

SkeletonSequence denormalize(const SkeletonSequence& x, const NormalizationStats& s) {
  if (!all_finite(x.coords)) throw NumericError("denormalize: non-finite input");
  SkeletonSequence out = x;
  for (std::size_t i = 0; i < out.coords.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    out.coords[i] = static_cast<float>(static_cast<double>(out.coords[i]) * s.stddev[c] + s.mean[c]);
  }
  return out;
}

namespace {

// Linear interpolation of a segment [seg_start, seg_start+seg_len) to
// target_frames. Exact copy when the lengths already match.
SkeletonSequence interp_segment(const SkeletonSequence& x, int seg_start, int seg_len,
                                int target_frames) {
  SkeletonSequence out(target_frames, x.joints);
  out.label = x.label;
  if (seg_len == target_frames) {
    std::memcpy(out.coords.data(), x.coords.data() + static_cast<std::size_t>(seg_start) * x.joints * 3,
                out.coords.size() * sizeof(float));
    return out;
  }
  for (int t = 0; t < target_frames; ++t) {
    // map output frame t onto the segment's continuous [0, seg_len-1] axis
    const double pos = (target_frames == 1)
                           ? 0.0
                           : static_cast<double>(t) * (seg_len - 1) / (target_frames - 1);
    const int f0 = std::min(static_cast<int>(pos), seg_len - 2);
    const double w = pos - f0;
    for (int v = 0; v < x.joints; ++v) {
      for (int c = 0; c < 3; ++c) {
        const double a = x.at(seg_start + f0, v, c);
        const double b = x.at(seg_start + f0 + 1, v, c);
        out.at(t, v, c) = static_cast<float>(a + w * (b - a));
      }
    }
  }
  return out;
}

}  // namespace

SkeletonSequence crop_resize(const SkeletonSequence& x, int target_frames,
                             double crop_ratio, Rng& rng) {
  if (!(crop_ratio > 0.0 && crop_ratio <= 1.0))
    throw ValueError("crop_resize: crop_ratio must be in (0, 1]");
  if (target_frames < 1) throw ValueError("crop_resize: target_frames must be >= 1");
  const int seg_len = static_cast<int>(std::ceil(crop_ratio * x.frames));
  if (seg_len < 2) throw ValueError("crop_resize: cropped segment shorter than 2 frames");
  const int max_start = x.frames - seg_len;
  const int start = (max_start > 0) ? static_cast<int>(rng.uniform_int(max_start + 1)) : 0;
  return interp_segment(x, start, seg_len, target_frames);
}

SkeletonSequence resize_frames(const SkeletonSequence& x, int target_frames) {
  if (x.frames < 2) throw ValueError("resize_frames: need at least 2 frames");
  return interp_segment(x, 0, x.frames, target_frames);
}

TokenGrid patchify(const SkeletonSequence& x, int patch_len) {
  if (patch_len < 1) throw ValueError("patchify: patch length must be >= 1");
  if (x.frames % patch_len != 0)
    throw ShapeError("patchify: frame count " + std::to_string(x.frames) +
                     " not divisible by patch length " + std::to_string(patch_len));
  TokenGrid g;
  g.patches = x.frames / patch_len;
  g.joints = x.joints;
  g.patch_len = patch_len;
  g.patch_dim = patch_len * 3;
  g.values = Mat(g.patches * g.joints, g.patch_dim);
  for (int p = 0; p < g.patches; ++p) {
    for (int v = 0; v < g.joints; ++v) {
      double* row = &g.values.at(p * g.joints + v, 0);
      for (int f = 0; f < patch_len; ++f) {
        for (int c = 0; c < 3; ++c) row[f * 3 + c] = x.at(p * patch_len + f, v, c);
      }
    }
  }
  return g;
}

SkeletonSequence unpatchify(const TokenGrid& g) {
  SkeletonSequence x(g.patches * g.patch_len, g.joints);
  for (int p = 0; p < g.patches; ++p) {
    for (int v = 0; v < g.joints; ++v) {
      const double* row = &g.values.at(p * g.joints + v, 0);
      for (int f = 0; f < g.patch_len; ++f) {
        for (int c = 0; c < 3; ++c)
          x.at(p * g.patch_len + f, v, c) = static_cast<float>(row[f * 3 + c]);
      }
    }
  }
  return x;
}

AugmentedViews augment(const SkeletonSequence& x, double rotation_max,
                       double noise_sigma, Rng& rng) {
  if (noise_sigma < 0) throw ValueError("augment: noise_sigma must be >= 0");
  const double ax = rng.uniform(-rotation_max, rotation_max);
  const double ay = rng.uniform(-rotation_max, rotation_max);
  const double az = rng.uniform(-rotation_max, rotation_max);
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  // R = Rx * Ry * Rz
  const double r[3][3] = {
      {cy * cz, -cy * sz, sy},
      {cx * sz + sx * sy * cz, cx * cz - sx * sy * sz, -sx * cy},
      {sx * sz - cx * sy * cz, sx * cz + cx * sy * sz, cx * cy},
  };

  AugmentedViews out;
  out.clean_view = x;
  for (int t = 0; t < x.frames; ++t) {
    for (int v = 0; v < x.joints; ++v) {
      const double p[3] = {x.at(t, v, 0), x.at(t, v, 1), x.at(t, v, 2)};
      for (int c = 0; c < 3; ++c) {
        out.clean_view.at(t, v, c) =
            static_cast<float>(r[c][0] * p[0] + r[c][1] * p[1] + r[c][2] * p[2]);
      }
    }
  }
  out.encoder_view = out.clean_view;
  if (noise_sigma > 0) {
    for (auto& c : out.encoder_view.coords)
      c = static_cast<float>(c + noise_sigma * rng.normal());
  }
  return out;
}

Occlusion apply_occlusion(const SkeletonSequence& x, const OcclusionSpec& spec) {
  Occlusion out;
  out.occluded = x;
  out.observed.assign(static_cast<std::size_t>(x.frames) * x.joints, 1);
  auto hide = [&](int t, int v) {
    out.observed[static_cast<std::size_t>(t) * x.joints + v] = 0;
    for (int c = 0; c < 3; ++c) out.occluded.at(t, v, c) = 0.0f;
  };
  if (spec.kind == OcclusionKind::frames) {
    if (spec.frame_start < 0 || spec.frame_len < 0 ||
        spec.frame_start + spec.frame_len > x.frames)
      throw ValueError("apply_occlusion: frame range out of bounds");
    for (int t = spec.frame_start; t < spec.frame_start + spec.frame_len; ++t)
      for (int v = 0; v < x.joints; ++v) hide(t, v);
  } else {
    if (x.joints != 25)
      throw ShapeError("apply_occlusion: body-part occlusion requires the 25-joint layout");
    for (int v : body_part_joints(spec.part))
      for (int t = 0; t < x.frames; ++t) hide(t, v);
  }
  bool any = false;
  for (auto o : out.observed) any |= (o != 0);
  if (!any) throw ValueError("apply_occlusion: occlusion covers every entry");
  return out;
}

std::vector<SkeletonSequence> synth_dataset(int n_classes, int n_per_class,
                                            int frames, int joints,
                                            std::uint64_t seed) {
  if (n_classes < 2) throw ValueError("synth_dataset: need at least 2 classes");
  if (frames < 2 || joints < 1) throw ValueError("synth_dataset: bad dimensions");
  Rng rng(seed);

  // Standing template on the 25-joint layout, hip centered at the origin.
  // For other joint counts the template wraps around.
  static const float base25[25][3] = {
      {0.00f, 0.00f, 0.0f},   {0.00f, 0.25f, 0.0f},  {0.00f, 0.50f, 0.0f},
      {0.00f, 0.65f, 0.0f},   {-0.20f, 0.45f, 0.0f}, {-0.30f, 0.20f, 0.0f},
      {-0.35f, -0.05f, 0.0f}, {-0.37f, -0.15f, 0.0f},{0.20f, 0.45f, 0.0f},
      {0.30f, 0.20f, 0.0f},   {0.35f, -0.05f, 0.0f}, {0.37f, -0.15f, 0.0f},
      {-0.10f, -0.10f, 0.0f}, {-0.12f, -0.50f, 0.0f},{-0.14f, -0.85f, 0.0f},
      {-0.16f, -0.92f, 0.1f}, {0.10f, -0.10f, 0.0f}, {0.12f, -0.50f, 0.0f},
      {0.14f, -0.85f, 0.0f},  {0.16f, -0.92f, 0.1f}, {0.00f, 0.40f, 0.0f},
      {-0.38f, -0.20f, 0.0f}, {-0.36f, -0.18f, 0.05f},{0.38f, -0.20f, 0.0f},
      {0.36f, -0.18f, 0.05f},
  };

  const BodyPart limbs[4] = {BodyPart::left_arm, BodyPart::right_arm,
                             BodyPart::left_leg, BodyPart::right_leg};

  std::vector<SkeletonSequence> out;
  out.reserve(static_cast<std::size_t>(n_classes) * n_per_class);
  for (int k = 0; k < n_classes; ++k) {
    // class signature: moving limb, frequency, amplitude, axis
    const auto& limb = body_part_joints(limbs[k % 4]);
    const double freq = 1.0 + 0.7 * k;
    const double amp = 0.18 + 0.04 * k;
    const int axis = k % 3;
    for (int i = 0; i < n_per_class; ++i) {
      SkeletonSequence x(frames, joints);
      x.label = static_cast<std::uint32_t>(k);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      const double amp_jitter = rng.uniform(0.9, 1.1);
      for (int t = 0; t < frames; ++t) {
        const double u = static_cast<double>(t) / frames;
        // offset-sine keeps a nonzero per-class mean displacement, so classes
        // stay separable in flattened-coordinate space under random phase
        const double wave = amp * amp_jitter * (0.5 + 0.5 * std::sin(2.0 * M_PI * freq * u + phase));
        for (int v = 0; v < joints; ++v) {
          for (int c = 0; c < 3; ++c) x.at(t, v, c) = base25[v % 25][c];
        }
        for (int v : limb) {
          if (v < joints) x.at(t, v, axis) += static_cast<float>(wave);
        }
      }
      for (auto& c : x.coords) c = static_cast<float>(c + 0.01 * rng.normal());
      out.push_back(std::move(x));
    }
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'S', 'K', 'L', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* ctx) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string(ctx) + ": truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_sequence(const SkeletonSequence& x, const fs::path& path) {
  if (!all_finite(x.coords)) throw NumericError("save_sequence: non-finite coordinates");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_sequence: cannot open " + path.string());
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(x.frames));
  put_u32(os, static_cast<std::uint32_t>(x.joints));
  put_u32(os, x.label);
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(x.coords.data()),
           static_cast<std::streamsize>(x.coords.size() * sizeof(float)));
  if (!os) throw IoError("save_sequence: write failed for " + path.string());
}

SkeletonSequence load_sequence(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_sequence: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("load_sequence: bad magic in " + path.string());
  const std::uint32_t frames = get_u32(is, "load_sequence");
  const std::uint32_t joints = get_u32(is, "load_sequence");
  const std::uint32_t label = get_u32(is, "load_sequence");
  if (frames < 1 || joints < 1)
    throw FormatError("load_sequence: invalid dimensions in " + path.string());
  SkeletonSequence x(static_cast<int>(frames), static_cast<int>(joints));
  x.label = label;
  if (!is.read(reinterpret_cast<char*>(x.coords.data()),
               static_cast<std::streamsize>(x.coords.size() * sizeof(float))))
    throw FormatError("load_sequence: truncated payload in " + path.string());
  if (!all_finite(x.coords))
    throw NumericError("load_sequence: non-finite values in " + path.string());
  return x;
}

std::vector<SkeletonSequence> Dataset::load_split(const std::string& split) const {
  std::vector<const DatasetEntry*> wanted;
  for (const auto& e : entries)
    if (e.split == split) wanted.push_back(&e);
  std::vector<SkeletonSequence> out(wanted.size());
  parallel_for(static_cast<int>(wanted.size()),
               [&](int i) { out[i] = load_sequence(dir / wanted[i]->file); });
  return out;
}

void save_dataset(const fs::path& dir, const std::vector<SkeletonSequence>& train,
                  const std::vector<SkeletonSequence>& test, int num_classes) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "macdiff-dataset-v1";
  manifest["num_classes"] = num_classes;
  json files = json::array();
  auto dump = [&](const std::vector<SkeletonSequence>& seqs, const std::string& split) {
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%05zu.skl", split.c_str(), i);
      save_sequence(seqs[i], dir / name);
      files.push_back({{"file", name}, {"split", split}});
    }
  };
  dump(train, "train");
  dump(test, "test");
  manifest["files"] = std::move(files);
  const NormalizationStats stats = compute_stats(train);
  manifest["stats"] = {{"mean", stats.mean}, {"std", stats.stddev}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("save_dataset: cannot write manifest in " + dir.string());
  os << manifest.dump(2) << "\n";
}

Dataset open_dataset(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("open_dataset: missing manifest.json in " + dir.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("open_dataset: malformed manifest: " + std::string(e.what()));
  }
  Dataset d;
  d.dir = dir;
  d.num_classes = manifest.at("num_classes").get<int>();
  for (const auto& f : manifest.at("files")) {
    d.entries.push_back({f.at("file").get<std::string>(), f.at("split").get<std::string>()});
  }
  const auto& st = manifest.at("stats");
  for (int c = 0; c < 3; ++c) {
    d.stats.mean[c] = st.at("mean")[c].get<double>();
    d.stats.stddev[c] = st.at("std")[c].get<double>();
  }
  return d;
}

}  // namespace macdiff
