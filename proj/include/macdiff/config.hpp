#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "macdiff/evaluate.hpp"
#include "macdiff/sampling.hpp"
#include "macdiff/training.hpp"

namespace macdiff {

// Merged, validated run configuration: defaults, then config file, then
// --set key=value overrides. Unknown keys are rejected by name.
struct RunConfig {
  nlohmann::json tree;

  static nlohmann::json defaults();
  static RunConfig load(const std::filesystem::path& config_file,
                        const std::vector<std::string>& overrides);
  static RunConfig from_json(const nlohmann::json& j);

  TrainConfig train_config() const;
  ModelConfig model_config() const;
  MaskSpec mask_spec() const;
  SamplerConfig sampler_config() const;
  InpaintConfig inpaint_config() const;
  ProbeConfig probe_config() const;
  FinetuneConfig finetune_config() const;
  int augment_t_s() const;
  double augment_lambda() const;

  // content hash of the canonical serialized tree
  std::string fingerprint() const;
};

// json snapshot helpers for checkpoints
nlohmann::json stats_to_json(const NormalizationStats& stats);
NormalizationStats stats_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace macdiff
