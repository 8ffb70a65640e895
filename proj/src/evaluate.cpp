#include "macdiff/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "macdiff/optim.hpp"

namespace macdiff {

FeatureSet extract_features(const std::vector<SkeletonSequence>& seqs,
                            const ParamStore& params, const ModelConfig& cfg,
                            const NormalizationStats& stats) {
  FeatureSet out;
  out.features = Mat(static_cast<int>(seqs.size()), cfg.embed_dim);
  out.labels.assign(seqs.size(), -1);
  const Mask full = Mask::all_kept(cfg.patches(), cfg.joints);
  parallel_for(static_cast<int>(seqs.size()), [&](int i) {
    SkeletonSequence x =
        seqs[i].frames == cfg.frames ? seqs[i] : resize_frames(seqs[i], cfg.frames);
    const TokenGrid grid = patchify(normalize(x, stats), cfg.patch_len);
    const EncodeResult enc = encode(params, cfg, grid, full);
    std::copy(enc.z_global.d.begin(), enc.z_global.d.end(), &out.features.at(i, 0));
    if (seqs[i].has_label()) out.labels[i] = static_cast<int>(seqs[i].label);
  });
  return out;
}

namespace {

int argmax_row(const Mat& m, int row) {
  int best = 0;
  for (int j = 1; j < m.cols; ++j)
    if (m.at(row, j) > m.at(row, best)) best = j;
  return best;
}

double head_accuracy(const Mat& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (int i = 0; i < logits.rows; ++i)
    if (argmax_row(logits, i) == labels[i]) ++correct;
  return static_cast<double>(correct) / logits.rows;
}

Mat gather_feature_rows(const Mat& features, const std::vector<int>& idx) {
  Mat out(static_cast<int>(idx.size()), features.cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(&features.at(idx[i], 0), &features.at(idx[i], 0) + features.cols,
              &out.at(static_cast<int>(i), 0));
  return out;
}

}  // namespace

ProbeResult linear_probe(const FeatureSet& train, const FeatureSet& test, int n_classes,
                         const ProbeConfig& pcfg, std::uint64_t seed) {
  if (n_classes < 2) throw ValueError("linear_probe: need at least 2 classes");
  if (train.features.rows < 1) throw ValueError("linear_probe: empty training set");
  std::set<int> seen(train.labels.begin(), train.labels.end());
  seen.erase(-1);
  if (seen.size() < 2) throw ValueError("linear_probe: single-class training set");

  const int c = train.features.cols;
  ParamStore head;
  head.tensors.emplace("probe.w", Mat(c, n_classes));
  head.tensors.emplace("probe.b", Mat(1, n_classes));
  SgdMomentum opt(pcfg.lr, pcfg.momentum);
  Rng rng(seed);

  auto eval_accuracy = [&]() {
    ag::Tape tape(false);
    Binding p = Binding::bind(tape, head, false);
    ag::Var logits = tape.linear(tape.constant(test.features), p("probe.w"), p("probe.b"));
    return head_accuracy(logits->value, test.labels);
  };

  ProbeResult result;
  std::vector<int> order(train.features.rows);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < pcfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int b = 0; b < static_cast<int>(order.size()); b += pcfg.batch_size) {
      std::vector<int> idx(order.begin() + b,
                           order.begin() + std::min<std::size_t>(order.size(), b + pcfg.batch_size));
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];
      ag::Tape tape(true);
      Binding p = Binding::bind(tape, head, true);
      ag::Var logits =
          tape.linear(tape.constant(gather_feature_rows(train.features, idx)), p("probe.w"),
                      p("probe.b"));
      ag::Var loss = tape.cross_entropy(logits, labels);
      tape.backward(loss);
      std::map<std::string, Mat> grads;
      for (const auto& [name, var] : p.vars) grads.emplace(name, var->grad);
      opt.step(head, grads);
    }
    result.per_epoch_accuracy.push_back(eval_accuracy());
  }
  result.accuracy = result.per_epoch_accuracy.empty() ? eval_accuracy()
                                                      : result.per_epoch_accuracy.back();
  return result;
}

std::vector<int> stratified_subset(const std::vector<int>& labels, double fraction,
                                   int n_classes, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValueError("stratified_subset: fraction must be in (0, 1]");
  const int n = static_cast<int>(labels.size());
  const int target = static_cast<int>(std::ceil(fraction * n));
  if (target < n_classes)
    throw ValueError("stratified_subset: fraction yields fewer than 1 sample per class");
  std::vector<std::vector<int>> by_class(n_classes);
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes)
      throw ValueError("stratified_subset: label out of range");
    by_class[labels[i]].push_back(i);
  }
  Rng rng(seed);
  for (auto& v : by_class) rng.shuffle(v);
  std::vector<int> subset;
  subset.reserve(target);
  std::vector<std::size_t> cursor(n_classes, 0);
  // round-robin over classes keeps the subset as balanced as possible
  while (static_cast<int>(subset.size()) < target) {
    bool advanced = false;
    for (int k = 0; k < n_classes && static_cast<int>(subset.size()) < target; ++k) {
      if (cursor[k] < by_class[k].size()) {
        subset.push_back(by_class[k][cursor[k]++]);
        advanced = true;
      }
    }
    if (!advanced) break;  // fraction of 1 exhausts everything
  }
  for (int k = 0; k < n_classes; ++k) {
    if (by_class[k].empty() || cursor[k] == 0)
      throw ValueError("stratified_subset: class " + std::to_string(k) +
                       " has no sample in the subset");
  }
  std::sort(subset.begin(), subset.end());
  return subset;
}

namespace {

struct PreparedGrid {
  Mat tokens;
  int label;
};

PreparedGrid prepare_eval_grid(const SkeletonSequence& x, const ModelConfig& cfg,
                               const NormalizationStats& stats) {
  SkeletonSequence r = x.frames == cfg.frames ? x : resize_frames(x, cfg.frames);
  PreparedGrid out;
  out.tokens = patchify(normalize(r, stats), cfg.patch_len).values;
  out.label = x.has_label() ? static_cast<int>(x.label) : -1;
  return out;
}

ag::Var head_forward(ag::Tape& tape, const Binding& p, ag::Var features) {
  ag::Var h = tape.gelu(tape.linear(features, p("head.w1"), p("head.b1")));
  return tape.linear(h, p("head.w2"), p("head.b2"));
}

ag::Var encode_pooled_var(ag::Tape& tape, const Binding& p, const Mat& tokens,
                          const ModelConfig& cfg) {
  ag::Var embedded = embed_tokens(tape, p, tokens, "enc", cfg);
  ag::Var z_local = encoder_forward(tape, p, embedded, cfg);
  return pool(tape, z_local);
}

}  // namespace

double finetune(const std::vector<SkeletonSequence>& train_seqs,
                const std::vector<SkeletonSequence>& test_seqs, int n_classes,
                const ParamStore& pretrained, const ModelConfig& cfg,
                const NormalizationStats& stats, const FinetuneConfig& fcfg,
                std::uint64_t seed, const OnlineAugmenter* augmenter) {
  if (train_seqs.empty()) throw ValueError("finetune: empty training set");
  for (const auto& x : train_seqs)
    if (!x.has_label()) throw ValueError("finetune: unlabeled training sample");

  Rng rng(seed);
  ParamStore params = pretrained;
  {
    const int c = cfg.embed_dim;
    params.tensors.emplace("head.w1", randn(c, c, 0.02, rng));
    params.tensors.emplace("head.b1", Mat(1, c));
    params.tensors.emplace("head.w2", randn(c, n_classes, 0.02, rng));
    params.tensors.emplace("head.b2", Mat(1, n_classes));
    for (const char* nm : {"head.w1", "head.w2"}) params.at(nm).quantize_f32();
  }

  std::vector<PreparedGrid> real(train_seqs.size());
  for (std::size_t i = 0; i < train_seqs.size(); ++i)
    real[i] = prepare_eval_grid(train_seqs[i], cfg, stats);

  const bool augment_on = augmenter && augmenter->lambda > 0.0;
  Rng aug_rng(seed ^ 0x9e3779b97f4a7c15ull);

  const int n_real = static_cast<int>(real.size());
  const int n_aug = augment_on
                        ? static_cast<int>(std::ceil(augmenter->lambda * n_real))
                        : 0;
  const int pool_n = n_real + n_aug;
  const long steps_per_epoch = (pool_n + fcfg.batch_size - 1) / fcfg.batch_size;
  const long total_steps = steps_per_epoch * fcfg.epochs;

  AdamW opt(fcfg.lr_start, 0.9, 0.999, 1e-8, fcfg.weight_decay);
  auto trainable = [&](const std::string& name) {
    return !fcfg.freeze_encoder || name.starts_with("head.");
  };

  long step = 0;
  std::vector<PreparedGrid> pool_grids;
  for (int epoch = 0; epoch < fcfg.epochs; ++epoch) {
    pool_grids = real;
    if (augment_on) {
      // fresh label-preserving samples from the frozen pretrained model
      AugmentedSet aug = build_augmented_set(train_seqs, augmenter->lambda, augmenter->t_s,
                                             *augmenter->pretrained, *augmenter->cfg,
                                             *augmenter->schedule, stats, aug_rng);
      for (const auto& s : aug.samples) pool_grids.push_back(prepare_eval_grid(s, cfg, stats));
    }
    std::vector<int> order(pool_grids.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t b = 0; b < order.size(); b += fcfg.batch_size) {
      ag::Tape tape(true);
      Binding p = Binding::bind_filtered(tape, params, trainable);
      ag::Var loss_acc = nullptr;
      const std::size_t end = std::min(order.size(), b + fcfg.batch_size);
      for (std::size_t i = b; i < end; ++i) {
        const PreparedGrid& g = pool_grids[order[i]];
        ag::Var z = encode_pooled_var(tape, p, g.tokens, cfg);
        ag::Var logits = head_forward(tape, p, z);
        ag::Var l = tape.cross_entropy(logits, {g.label});
        loss_acc = loss_acc ? tape.add(loss_acc, l) : l;
      }
      ag::Var loss = tape.scale(loss_acc, 1.0 / static_cast<double>(end - b));
      if (!std::isfinite(loss->value.at(0, 0)))
        throw NumericError("finetune: non-finite loss");
      tape.backward(loss);
      std::map<std::string, Mat> grads;
      for (const auto& [name, var] : p.vars)
        if (var->requires_grad) grads.emplace(name, var->grad);
      clip_grad_norm(grads, 1.0);
      opt.set_lr(lr_at(std::min(step + 1, total_steps), total_steps, fcfg.lr_start, fcfg.lr_end));
      opt.step(params, grads);
      ++step;
    }
  }

  // test accuracy with the fine-tuned encoder + head
  int correct = 0;
  for (const auto& x : test_seqs) {
    const PreparedGrid g = prepare_eval_grid(x, cfg, stats);
    ag::Tape tape(false);
    Binding p = Binding::bind(tape, params, false);
    ag::Var logits = head_forward(tape, p, encode_pooled_var(tape, p, g.tokens, cfg));
    if (argmax_row(logits->value, 0) == g.label) ++correct;
  }
  return test_seqs.empty() ? 0.0 : static_cast<double>(correct) / test_seqs.size();
}

SemiResult semi_supervised_run(const std::vector<SkeletonSequence>& train_seqs,
                               const std::vector<SkeletonSequence>& test_seqs,
                               int n_classes, double fraction, double lambda, int t_s,
                               const ParamStore& pretrained, const ModelConfig& cfg,
                               const NoiseSchedule& schedule,
                               const NormalizationStats& stats,
                               const FinetuneConfig& fcfg, std::uint64_t seed) {
  std::vector<int> labels(train_seqs.size());
  for (std::size_t i = 0; i < train_seqs.size(); ++i) {
    if (!train_seqs[i].has_label()) throw ValueError("semi_supervised_run: unlabeled sample");
    labels[i] = static_cast<int>(train_seqs[i].label);
  }
  const auto subset_idx = stratified_subset(labels, fraction, n_classes, seed);
  std::vector<SkeletonSequence> subset;
  subset.reserve(subset_idx.size());
  for (int i : subset_idx) subset.push_back(train_seqs[i]);

  SemiResult result;
  result.n_real = static_cast<int>(subset.size());
  result.n_augmented = static_cast<int>(std::ceil(lambda * result.n_real));

  result.accuracy_plain =
      finetune(subset, test_seqs, n_classes, pretrained, cfg, stats, fcfg, seed, nullptr);

  OnlineAugmenter aug;
  aug.pretrained = &pretrained;
  aug.cfg = &cfg;
  aug.schedule = &schedule;
  aug.lambda = lambda;
  aug.t_s = t_s;
  result.accuracy_augmented =
      finetune(subset, test_seqs, n_classes, pretrained, cfg, stats, fcfg, seed, &aug);
  return result;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["metrics"] = metrics;
  j["config_fingerprint"] = config_fingerprint;
  j["seed"] = seed;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  for (const auto& [k, v] : j.at("metrics").items()) r.metrics[k] = v.get<double>();
  r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

}  // namespace macdiff
