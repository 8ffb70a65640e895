#include "macdiff/training.hpp"

#include <cmath>
#include <fstream>

namespace macdiff {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr_start >= lr_end && lr_end > 0))
    throw ConfigError("TrainConfig: need lr_start >= lr_end > 0");
  if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
  if (epochs < 0 || max_steps < 0) throw ConfigError("TrainConfig: negative run length");
  if (!(crop_ratio_min > 0 && crop_ratio_min <= crop_ratio_max && crop_ratio_max <= 1.0))
    throw ConfigError("TrainConfig: crop ratio range must satisfy 0 < min <= max <= 1");
  if (noise_sigma < 0) throw ConfigError("TrainConfig: noise_sigma must be >= 0");
  if (timesteps < 2) throw ConfigError("TrainConfig: timesteps must be >= 2");
  model.validate();
}

namespace {

struct PreparedSample {
  TokenGrid enc_grid;    // normalized, rotated + noised encoder view
  Mat clean_tokens;      // normalized, rotated clean view (x0, token layout)
};

PreparedSample prepare_sample(const SkeletonSequence& x, const TrainConfig& cfg,
                              const NormalizationStats& stats, Rng& rng) {
  const double ratio = rng.uniform(cfg.crop_ratio_min, cfg.crop_ratio_max);
  SkeletonSequence cropped = crop_resize(x, cfg.model.frames, ratio, rng);
  AugmentedViews views = augment(cropped, cfg.rotation_max, cfg.noise_sigma, rng);
  PreparedSample out;
  out.enc_grid = patchify(normalize(views.encoder_view, stats), cfg.model.patch_len);
  out.clean_tokens = patchify(normalize(views.clean_view, stats), cfg.model.patch_len).values;
  return out;
}

std::function<bool(const std::string&)> trainable_predicate(const TrainConfig& cfg) {
  if (!cfg.freeze_encoder) return [](const std::string&) { return true; };
  return [](const std::string& name) { return !name.starts_with("enc."); };
}

}  // namespace

double train_step(ParamStore& params, AdamW& opt,
                  const std::vector<const SkeletonSequence*>& batch,
                  const TrainConfig& cfg, const NoiseSchedule& schedule,
                  const NormalizationStats& stats, Rng& rng, const StepOracle* oracle) {
  if (batch.empty()) throw ValueError("train_step: empty batch");
  const int n_tokens = cfg.model.tokens();
  const int batch_n = static_cast<int>(batch.size());

  ag::Tape tape(oracle == nullptr);
  Binding p = Binding::bind_filtered(tape, params, trainable_predicate(cfg));

  ag::Var loss_acc = nullptr;
  double oracle_loss = 0.0;

  for (const SkeletonSequence* xp : batch) {
    PreparedSample s = prepare_sample(*xp, cfg, stats, rng);
    const Mask mask = make_mask(cfg.mask, s.enc_grid, rng);

    ag::Var tokens = embed_tokens(tape, p, s.enc_grid.values, "enc", cfg.model);
    ag::Var kept = tape.gather_rows(tokens, mask.kept_indices);
    ag::Var z_local = encoder_forward(tape, p, kept, cfg.model);
    ag::Var z_global = pool(tape, z_local);
    ag::Var cond = assemble_condition(tape, p, z_local, mask, z_global,
                                      cfg.condition_mode, n_tokens);
    cond = condition_dropout(tape, p, cond, cfg.model.condition_dropout, rng, true);

    const int t = 1 + static_cast<int>(rng.uniform_int(schedule.timesteps));
    Mat eps(s.clean_tokens.rows, s.clean_tokens.cols);
    for (auto& e : eps.d) e = rng.normal();
    const Mat xt = forward_diffuse(s.clean_tokens, t, eps, schedule);

    if (oracle) {
      const Mat pred = oracle->predict(xt, t);
      if (!pred.same_shape(eps)) throw ShapeError("train_step: oracle prediction shape mismatch");
      double acc = 0;
      for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = pred.d[i] - eps.d[i];
        acc += d * d;
      }
      oracle_loss += acc / static_cast<double>(eps.size());
      continue;
    }

    ag::Var eps_hat = decoder_forward(tape, p, xt, t, cond, cfg.model);
    ag::Var sample_loss = tape.mse(eps_hat, eps);
    loss_acc = loss_acc ? tape.add(loss_acc, sample_loss) : sample_loss;
  }

  if (oracle) return oracle_loss / batch_n;

  ag::Var loss = tape.scale(loss_acc, 1.0 / batch_n);
  const double loss_value = loss->value.at(0, 0);
  if (!std::isfinite(loss_value))
    throw NumericError("train_step: non-finite loss (batch of " + std::to_string(batch_n) + ")");
  tape.backward(loss);

  std::map<std::string, Mat> grads;
  for (const auto& [name, var] : p.vars) {
    if (var->requires_grad) grads.emplace(name, var->grad);
  }
  clip_grad_norm(grads, cfg.grad_clip);
  opt.step(params, grads);
  return loss_value;
}

namespace {

nlohmann::json optional_snapshot(const nlohmann::json& snapshot) {
  return snapshot.is_null() ? nlohmann::json::object() : snapshot;
}

}  // namespace

TrainResult run_training_mem(const std::vector<SkeletonSequence>& train_seqs,
                             const NormalizationStats& stats, const TrainConfig& cfg,
                             const fs::path& out_dir, const nlohmann::json& config_snapshot,
                             const TrainStart& start) {
  cfg.validate();
  if (train_seqs.empty()) throw ValueError("run_training: empty training split");
  if (start.resume && start.init_from)
    throw ConfigError("run_training: resume and init_from are mutually exclusive");

  const NoiseSchedule schedule = build_schedule(cfg.schedule_kind, cfg.timesteps, cfg.tau);
  const int n = static_cast<int>(train_seqs.size());
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps =
      cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * static_cast<long>(cfg.epochs);

  Rng rng(cfg.seed);
  ParamStore params;
  AdamW opt(cfg.lr_start, 0.9, 0.999, 1e-8, cfg.weight_decay);
  long step = 0;

  if (start.resume) {
    Checkpoint ckpt = load_checkpoint(*start.resume);
    check_param_shapes(ckpt.params, cfg.model);
    params = std::move(ckpt.params);
    opt.restore(std::move(ckpt.opt_state), ckpt.opt_step);
    rng.deserialize(ckpt.rng_state);
    step = ckpt.step;
  } else if (start.init_from) {
    Checkpoint ckpt = load_checkpoint(*start.init_from);
    check_param_shapes(ckpt.params, cfg.model);
    params = std::move(ckpt.params);
  } else {
    params = init_params(cfg.model, rng);
  }

  if (!out_dir.empty()) fs::create_directories(out_dir);

  TrainResult result;
  auto snapshot_ckpt = [&]() {
    Checkpoint c;
    c.step = step;
    c.opt_step = opt.step_count();
    c.config = optional_snapshot(config_snapshot);
    c.rng_state = rng.serialize();
    c.params = params;
    c.opt_state = opt.state();
    return c;
  };
  auto save_periodic = [&](const std::string& tag) {
    if (out_dir.empty()) return fs::path();
    const fs::path base = out_dir / ("ckpt_" + tag);
    save_checkpoint(snapshot_ckpt(), base);
    return base;
  };

  int epoch = static_cast<int>(step / std::max<long>(1, steps_per_epoch));
  while (step < total_steps) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    for (int b = 0; b < n && step < total_steps; b += cfg.batch_size) {
      std::vector<const SkeletonSequence*> batch;
      for (int i = b; i < std::min(n, b + cfg.batch_size); ++i)
        batch.push_back(&train_seqs[order[i]]);
      const double lr = lr_at(step + 1, total_steps, cfg.lr_start, cfg.lr_end);
      opt.set_lr(lr);
      double loss;
      try {
        loss = train_step(params, opt, batch, cfg, schedule, stats, rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(step + 1));
      }
      ++step;
      result.log.push_back({step, loss, lr});
    }
    ++epoch;
    if (cfg.checkpoint_every_epochs > 0 && epoch % cfg.checkpoint_every_epochs == 0 &&
        step < total_steps) {
      save_periodic("ep" + std::to_string(epoch));
    }
  }

  result.final = snapshot_ckpt();
  result.final_base = save_periodic("final");

  if (!out_dir.empty()) {
    std::ofstream csv(out_dir / "loss.csv");
    if (!csv) throw IoError("run_training: cannot write loss.csv in " + out_dir.string());
    csv << "step,loss,lr\n";
    csv.precision(12);
    for (const auto& row : result.log)
      csv << row.step << "," << row.loss << "," << row.lr << "\n";
  }
  return result;
}

TrainResult run_training(const Dataset& dataset, const TrainConfig& cfg,
                         const fs::path& out_dir, const nlohmann::json& config_snapshot,
                         const TrainStart& start) {
  return run_training_mem(dataset.load_split("train"), dataset.stats, cfg, out_dir,
                          config_snapshot, start);
}

namespace {

// fixed tiny geometry for the finite-difference check
ModelConfig gradcheck_config() {
  ModelConfig m;
  m.embed_dim = 8;
  m.mlp_dim = 16;
  m.heads = 2;
  m.encoder_layers = 1;
  m.decoder_layers = 1;
  m.patch_len = 1;
  m.frames = 2;
  m.joints = 1;  // 2 tokens
  m.condition_dropout = 0.0;
  return m;
}

// all tensors randomized (no zero-init shortcuts) so every path carries signal
ParamStore gradcheck_params(const ModelConfig& cfg, Rng& rng) {
  ParamStore params = init_params(cfg, rng);
  for (auto& [name, m] : params.tensors) {
    const bool gain = name.ends_with(".g");
    for (auto& x : m.d) x = gain ? 1.0 + 0.1 * rng.normal() : 0.3 * rng.normal();
  }
  return params;
}

}  // namespace

GradCheckReport grad_check(double tolerance, std::uint64_t seed) {
  const ModelConfig mcfg = gradcheck_config();
  Rng rng(seed);
  ParamStore params = gradcheck_params(mcfg, rng);

  const NoiseSchedule schedule = build_schedule(ScheduleKind::inverse_cosine, 50, 0.0);
  const int t_step = 17;

  Mat enc_grid(mcfg.tokens(), mcfg.patch_dim());
  for (auto& x : enc_grid.d) x = rng.normal();
  Mat clean = enc_grid;
  for (auto& x : clean.d) x += 0.05 * rng.normal();
  Mat eps(clean.rows, clean.cols);
  for (auto& x : eps.d) x = rng.normal();
  const Mat xt = forward_diffuse(clean, t_step, eps, schedule);

  MaskSpec mspec;
  mspec.strategy = MaskStrategy::random;
  mspec.ratio = 0.5;  // keeps 1 of 2 tokens, exercising both condition paths
  TokenGrid grid;
  grid.patches = mcfg.patches();
  grid.joints = mcfg.joints;
  grid.patch_len = mcfg.patch_len;
  grid.patch_dim = mcfg.patch_dim();
  grid.values = enc_grid;
  const Mask mask = make_mask(mspec, grid, rng);

  auto loss_of = [&](const ParamStore& ps, bool with_grad)
      -> std::pair<double, std::map<std::string, Mat>> {
    ag::Tape tape(with_grad);
    Binding p = Binding::bind(tape, ps, with_grad);
    ag::Var tokens = embed_tokens(tape, p, enc_grid, "enc", mcfg);
    ag::Var kept = tape.gather_rows(tokens, mask.kept_indices);
    ag::Var z_local = encoder_forward(tape, p, kept, mcfg);
    ag::Var z_global = pool(tape, z_local);
    ag::Var cond = assemble_condition(tape, p, z_local, mask, z_global,
                                      ConditionMode::assembled, mcfg.tokens());
    ag::Var eps_hat = decoder_forward(tape, p, xt, t_step, cond, mcfg);
    ag::Var loss = tape.mse(eps_hat, eps);
    const double value = loss->value.at(0, 0);
    std::map<std::string, Mat> grads;
    if (with_grad) {
      tape.backward(loss);
      for (const auto& [name, m] : ps.tensors) grads.emplace(name, p.grad(name));
    }
    return {value, std::move(grads)};
  };

  const auto [loss0, analytic] = loss_of(params, true);
  check_finite(loss0, "grad_check loss");

  GradCheckReport report;
  report.tolerance = tolerance;
  const double h = 1e-4;
  const int per_tensor = 8;
  ParamStore probe = params;
  for (const auto& [name, m] : params.tensors) {
    const int n_coords = static_cast<int>(m.size());
    const auto coords = rng.sample_without_replacement(n_coords, std::min(per_tensor, n_coords));
    for (int ci : coords) {
      Mat& target = probe.at(name);
      const double saved = target.d[ci];
      target.d[ci] = saved + h;
      const double lp = loss_of(probe, false).first;
      target.d[ci] = saved - h;
      const double lm = loss_of(probe, false).first;
      target.d[ci] = saved;
      const double numeric = (lp - lm) / (2 * h);
      const double exact = analytic.at(name).d[ci];
      const double rel = std::abs(exact - numeric) /
                         std::max({std::abs(exact), std::abs(numeric), 1e-6});
      ++report.sampled;
      if (rel < tolerance) ++report.within_tolerance;
      if (rel > report.worst_rel_err) {
        report.worst_rel_err = rel;
        report.worst_tensor = name;
      }
    }
  }
  report.fraction = report.sampled ? static_cast<double>(report.within_tolerance) / report.sampled : 0.0;
  report.passed = report.fraction >= 0.95;
  return report;
}

double mean_tail(const std::vector<StepLog>& log, int k) {
  if (log.empty()) throw ValueError("mean_tail: empty log");
  const int n = static_cast<int>(log.size());
  const int start = std::max(0, n - k);
  double acc = 0;
  for (int i = start; i < n; ++i) acc += log[i].loss;
  return acc / (n - start);
}

}  // namespace macdiff
