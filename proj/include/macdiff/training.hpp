#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "macdiff/checkpoint.hpp"
#include "macdiff/masking.hpp"
#include "macdiff/model.hpp"
#include "macdiff/optim.hpp"
#include "macdiff/schedule.hpp"
#include "macdiff/skeleton.hpp"

namespace macdiff {

struct TrainConfig {
  int epochs = 100;
  long max_steps = 0;  // > 0 overrides epochs
  int batch_size = 128;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double weight_decay = 0.05;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every_epochs = 0;  // 0 = final checkpoint only

  // augmentation knobs
  double crop_ratio_min = 0.5;
  double crop_ratio_max = 1.0;
  double rotation_max = M_PI / 6.0;
  double noise_sigma = 0.005;

  MaskSpec mask;
  ScheduleKind schedule_kind = ScheduleKind::inverse_cosine;
  double tau = 0.0;
  int timesteps = 1000;
  ModelConfig model;
  ConditionMode condition_mode = ConditionMode::assembled;
  bool freeze_encoder = false;

  void validate() const;
};

// Test hook: replaces the decoder prediction; no parameters are updated when
// an oracle is installed.
struct StepOracle {
  std::function<Mat(const Mat& xt_tokens, int t)> predict;
};

// One optimization step of the conditional denoising objective:
// augment -> normalize -> patchify -> embed -> mask -> encode -> pool ->
// assemble condition -> condition dropout -> diffuse clean view -> decode ->
// mean squared noise error -> backward -> clipped AdamW update.
// The Gaussian noise augmentation touches only the encoder path.
double train_step(ParamStore& params, AdamW& opt,
                  const std::vector<const SkeletonSequence*>& batch,
                  const TrainConfig& cfg, const NoiseSchedule& schedule,
                  const NormalizationStats& stats, Rng& rng,
                  const StepOracle* oracle = nullptr);

struct StepLog {
  long step;
  double loss;
  double lr;
};

struct TrainResult {
  Checkpoint final;
  std::vector<StepLog> log;
  std::filesystem::path final_base;  // checkpoint base path, empty if not saved
};

// resume: continue an interrupted run exactly (params, optimizer, RNG, step).
// init_from: warm-start a new stage from another run's parameters.
struct TrainStart {
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> init_from;
};

// Full training loop: epochs * ceil(N / batch) steps (or max_steps), loss CSV
// and atomic periodic checkpoints under out_dir. Deterministic in
// (dataset bytes, config, seed); resuming from a checkpoint reproduces the
// uninterrupted run exactly.
TrainResult run_training(const Dataset& dataset, const TrainConfig& cfg,
                         const std::filesystem::path& out_dir,
                         const nlohmann::json& config_snapshot = nlohmann::json::object(),
                         const TrainStart& start = {});

// In-memory variant used by tests and the fine-tuning stages.
TrainResult run_training_mem(const std::vector<SkeletonSequence>& train_seqs,
                             const NormalizationStats& stats, const TrainConfig& cfg,
                             const std::filesystem::path& out_dir,
                             const nlohmann::json& config_snapshot = nlohmann::json::object(),
                             const TrainStart& start = {});

struct GradCheckReport {
  int sampled = 0;
  int within_tolerance = 0;
  double fraction = 0.0;
  double tolerance = 1e-4;
  std::string worst_tensor;
  double worst_rel_err = 0.0;
  bool passed = false;
};

// Central finite differences (h = 1e-4, float64) against the analytic
// gradients of the full conditional loss on a C=8, 1+1 layer, 2-token model.
GradCheckReport grad_check(double tolerance = 1e-4, std::uint64_t seed = 0);

double mean_tail(const std::vector<StepLog>& log, int k);

}  // namespace macdiff
