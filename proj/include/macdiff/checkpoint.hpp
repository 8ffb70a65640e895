#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "macdiff/mat.hpp"
#include "macdiff/model.hpp"

namespace macdiff {

// Versioned training snapshot. On disk it is a pair of files:
//   <base>.json   manifest: version, step, config snapshot, RNG state,
//                 tensor directory (name -> shape, byte offset)
//   <base>.bin    tensor blob; per tensor: u32 name length, UTF-8 name,
//                 u32 rank, u32 dims, float32 LE payload, u32 CRC32
// Optimizer moments are stored alongside parameters under "opt." names.
struct Checkpoint {
  int format_version = 1;
  long step = 0;
  long opt_step = 0;
  nlohmann::json config;  // opaque snapshot, round-tripped verbatim
  std::string rng_state;
  ParamStore params;
  std::map<std::string, Mat> opt_state;
};

// Atomic save: both files are written to temporaries and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& base);

Checkpoint load_checkpoint(const std::filesystem::path& base);

// Errors with the first offending tensor name if the stored parameter shapes
// do not match a model config.
void check_param_shapes(const ParamStore& params, const ModelConfig& cfg);

}  // namespace macdiff
