#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "macdiff/model.hpp"
#include "macdiff/sampling.hpp"
#include "macdiff/skeleton.hpp"

namespace macdiff {

// Pooled encoder features, one row per sequence.
struct FeatureSet {
  Mat features;
  std::vector<int> labels;  // -1 where unlabeled
};

// Frozen encoder, full token grid (no masking), deterministic preprocessing
// (full-range resize + normalize).
FeatureSet extract_features(const std::vector<SkeletonSequence>& seqs,
                            const ParamStore& params, const ModelConfig& cfg,
                            const NormalizationStats& stats);

struct ProbeConfig {
  int epochs = 100;
  double lr = 0.1;
  double momentum = 0.9;
  int batch_size = 128;
};

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> per_epoch_accuracy;  // on the test split, for plotting
};

// Single linear layer + softmax cross-entropy, SGD with momentum.
ProbeResult linear_probe(const FeatureSet& train, const FeatureSet& test, int n_classes,
                         const ProbeConfig& pcfg, std::uint64_t seed);

struct FinetuneConfig {
  int epochs = 100;
  double lr_start = 3e-4;
  double lr_end = 1e-5;
  double weight_decay = 0.05;
  int batch_size = 32;
  bool freeze_encoder = false;
};

// Regenerates label-preserving augmented samples from the frozen pretrained
// model; invoked once per epoch when attached to a fine-tuning run.
struct OnlineAugmenter {
  const ParamStore* pretrained = nullptr;
  const ModelConfig* cfg = nullptr;
  const NoiseSchedule* schedule = nullptr;
  double lambda = 0.0;
  int t_s = 500;
};

// MLP head (one hidden layer of width C) on pooled features; the encoder
// trains along with the head unless frozen. Returns test accuracy.
double finetune(const std::vector<SkeletonSequence>& train_seqs,
                const std::vector<SkeletonSequence>& test_seqs, int n_classes,
                const ParamStore& pretrained, const ModelConfig& cfg,
                const NormalizationStats& stats, const FinetuneConfig& fcfg,
                std::uint64_t seed, const OnlineAugmenter* augmenter = nullptr);

// Seeded stratified subset: ceil(p * N) indices with every class represented.
std::vector<int> stratified_subset(const std::vector<int>& labels, double fraction,
                                   int n_classes, std::uint64_t seed);

struct SemiResult {
  double accuracy_augmented = 0.0;
  double accuracy_plain = 0.0;
  int n_real = 0;
  int n_augmented = 0;
};

// Fine-tunes on a p-fraction of the labeled training set, with and without
// diffusion-based augmentation, under the same seed.
SemiResult semi_supervised_run(const std::vector<SkeletonSequence>& train_seqs,
                               const std::vector<SkeletonSequence>& test_seqs,
                               int n_classes, double fraction, double lambda, int t_s,
                               const ParamStore& pretrained, const ModelConfig& cfg,
                               const NoiseSchedule& schedule,
                               const NormalizationStats& stats,
                               const FinetuneConfig& fcfg, std::uint64_t seed);

// Named metric values plus the provenance needed to reproduce them.
struct MetricReport {
  std::map<std::string, double> metrics;
  std::string config_fingerprint;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

}  // namespace macdiff
