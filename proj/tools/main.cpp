// macdiff command-line tool: one binary orchestrating dataset synthesis,
// pre-training, downstream evaluation, generation, inpainting, and
// diffusion-based augmentation. Human-readable progress goes to stderr;
// machine-readable results go to report files.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "macdiff/checkpoint.hpp"
#include "macdiff/config.hpp"
#include "macdiff/evaluate.hpp"
#include "macdiff/metrics.hpp"
#include "macdiff/sampling.hpp"
#include "macdiff/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace macdiff;

namespace {

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

void write_report(const fs::path& out_dir, const std::string& command,
                  const RunConfig& rc, std::uint64_t seed, const json& metrics,
                  const json& extra = json::object()) {
  fs::create_directories(out_dir);
  json report;
  report["command"] = command;
  report["config_fingerprint"] = rc.fingerprint();
  report["seed"] = seed;
  report["metrics"] = metrics;
  for (const auto& [k, v] : extra.items()) report[k] = v;
  report["timestamp"] = iso_timestamp();
  std::ofstream os(out_dir / "report.json");
  if (!os) throw IoError("cannot write report.json in " + out_dir.string());
  os << report.dump(2) << "\n";
}

void require_empty_or_force(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw IoError("output directory " + dir.string() +
                  " is not empty (pass --force to overwrite)");
}

struct LoadedModel {
  Checkpoint ckpt;
  ModelConfig model;
  NoiseSchedule schedule;
  NormalizationStats stats;
};

LoadedModel load_model(const fs::path& base) {
  LoadedModel lm;
  lm.ckpt = load_checkpoint(base);
  if (!lm.ckpt.config.contains("run"))
    throw FormatError("checkpoint has no embedded run config: " + base.string());
  const json& run = lm.ckpt.config.at("run");
  lm.model = model_config_from_json(run.at("model"));
  check_param_shapes(lm.ckpt.params, lm.model);
  const json& d = run.at("diffusion");
  lm.schedule = build_schedule(schedule_kind_from_name(d.at("kind").get<std::string>()),
                               d.at("T").get<int>(), d.at("tau").get<double>());
  lm.stats = stats_from_json(lm.ckpt.config.at("stats"));
  return lm;
}

std::vector<SkeletonSequence> load_skl_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".skl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .skl files in " + dir.string());
  std::vector<SkeletonSequence> out(files.size());
  parallel_for(static_cast<int>(files.size()), [&](int i) { out[i] = load_sequence(files[i]); });
  return out;
}

OcclusionSpec parse_occlusion(const std::string& spec, int frames) {
  OcclusionSpec o;
  if (spec.starts_with("frames:")) {
    o.kind = OcclusionKind::frames;
    const auto rest = spec.substr(7);
    const auto colon = rest.find(':');
    if (colon == std::string::npos)
      throw ConfigError("occlusion spec must be frames:START:LEN or part:NAME");
    o.frame_start = std::stoi(rest.substr(0, colon));
    o.frame_len = std::stoi(rest.substr(colon + 1));
    if (o.frame_start < 0 || o.frame_len < 0 || o.frame_start + o.frame_len > frames)
      throw ConfigError("occlusion frame range out of bounds");
    return o;
  }
  if (spec.starts_with("part:")) {
    o.kind = OcclusionKind::body_part;
    const auto name = spec.substr(5);
    const auto part = body_part_from_name(name);
    if (!part) throw ConfigError("unknown body part: " + name);
    o.part = *part;
    return o;
  }
  throw ConfigError("occlusion spec must be frames:START:LEN or part:NAME");
}

json snapshot_for_checkpoint(const RunConfig& rc, const NormalizationStats& stats) {
  return json{{"run", rc.tree}, {"stats", stats_to_json(stats)}};
}

// ---- commands ----

int cmd_synth(const RunConfig& rc, const fs::path& out, std::uint64_t seed, bool force,
              int classes, int per_class, int frames, int joints) {
  require_empty_or_force(out, force);
  auto train = synth_dataset(classes, per_class, frames, joints, seed);
  auto test = synth_dataset(classes, per_class, frames, joints, seed + 1);
  save_dataset(out, train, test, classes);
  std::cerr << "synth: wrote " << train.size() << " train + " << test.size()
            << " test sequences to " << out << "\n";
  write_report(out, "synth", rc, seed,
               json{{"train_sequences", train.size()}, {"test_sequences", test.size()}},
               json{{"classes", classes}, {"frames", frames}, {"joints", joints}});
  return 0;
}

int cmd_train(const RunConfig& rc, const fs::path& data, const fs::path& out,
              const std::string& resume, const std::string& init_from) {
  const Dataset ds = open_dataset(data);
  TrainConfig cfg = rc.train_config();
  TrainStart start;
  if (!resume.empty()) start.resume = fs::path(resume);
  if (!init_from.empty()) start.init_from = fs::path(init_from);
  const json snapshot = snapshot_for_checkpoint(rc, ds.stats);
  TrainResult result = run_training(ds, cfg, out, snapshot, start);
  const double final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  const double tail = result.log.empty() ? 0.0 : mean_tail(result.log, 100);
  std::cerr << "train: " << result.log.size() << " steps, final loss " << final_loss
            << ", checkpoint " << result.final_base << "\n";
  write_report(out, "train", rc, cfg.seed,
               json{{"steps", result.log.size()},
                    {"final_loss", final_loss},
                    {"smoothed_loss_100", tail}},
               json{{"checkpoint", result.final_base.string()}});
  return 0;
}

int cmd_probe(const RunConfig& rc, const fs::path& ckpt, const fs::path& data,
              const fs::path& out, std::uint64_t seed) {
  const LoadedModel lm = load_model(ckpt);
  const Dataset ds = open_dataset(data);
  const auto train = ds.load_split("train");
  const auto test = ds.load_split("test");
  const FeatureSet ftr = extract_features(train, lm.ckpt.params, lm.model, lm.stats);
  const FeatureSet fte = extract_features(test, lm.ckpt.params, lm.model, lm.stats);
  const ProbeResult res = linear_probe(ftr, fte, ds.num_classes, rc.probe_config(), seed);
  fs::create_directories(out);
  {
    std::ofstream csv(out / "probe_acc.csv");
    csv << "epoch,test_accuracy\n";
    for (std::size_t i = 0; i < res.per_epoch_accuracy.size(); ++i)
      csv << (i + 1) << "," << res.per_epoch_accuracy[i] << "\n";
  }
  std::cerr << "probe: test accuracy " << res.accuracy << "\n";
  write_report(out, "probe", rc, seed, json{{"accuracy", res.accuracy}});
  return 0;
}

int cmd_finetune(const RunConfig& rc, const fs::path& ckpt, const fs::path& data,
                 const fs::path& out, std::uint64_t seed, double fraction) {
  const LoadedModel lm = load_model(ckpt);
  const Dataset ds = open_dataset(data);
  auto train = ds.load_split("train");
  const auto test = ds.load_split("test");
  if (fraction < 1.0) {
    std::vector<int> labels(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) labels[i] = static_cast<int>(train[i].label);
    const auto idx = stratified_subset(labels, fraction, ds.num_classes, seed);
    std::vector<SkeletonSequence> subset;
    for (int i : idx) subset.push_back(train[i]);
    train = std::move(subset);
  }
  const double acc = finetune(train, test, ds.num_classes, lm.ckpt.params, lm.model,
                              lm.stats, rc.finetune_config(), seed);
  std::cerr << "finetune: test accuracy " << acc << " (" << train.size() << " samples)\n";
  write_report(out, "finetune", rc, seed,
               json{{"accuracy", acc}, {"train_samples", train.size()}});
  return 0;
}

int cmd_semi(const RunConfig& rc, const fs::path& ckpt, const fs::path& data,
             const fs::path& out, std::uint64_t seed, double fraction, double lambda,
             int t_s) {
  const LoadedModel lm = load_model(ckpt);
  const Dataset ds = open_dataset(data);
  const auto train = ds.load_split("train");
  const auto test = ds.load_split("test");
  const SemiResult res =
      semi_supervised_run(train, test, ds.num_classes, fraction, lambda, t_s,
                          lm.ckpt.params, lm.model, lm.schedule, lm.stats,
                          rc.finetune_config(), seed);
  std::cerr << "semi: augmented " << res.accuracy_augmented << " vs plain "
            << res.accuracy_plain << " (" << res.n_real << " real + " << res.n_augmented
            << " augmented)\n";
  write_report(out, "semi", rc, seed,
               json{{"accuracy_augmented", res.accuracy_augmented},
                    {"accuracy_plain", res.accuracy_plain},
                    {"n_real", res.n_real},
                    {"n_augmented", res.n_augmented}},
               json{{"fraction", fraction}, {"lambda", lambda}, {"t_s", t_s}});
  return 0;
}

int cmd_generate(const RunConfig& rc, const fs::path& ckpt, const fs::path& out,
                 std::uint64_t seed, int count, const std::string& condition_file,
                 bool force) {
  require_empty_or_force(out, force);
  const LoadedModel lm = load_model(ckpt);
  Rng rng(seed);
  std::optional<ConditionTokens> cond;
  if (!condition_file.empty()) {
    SkeletonSequence src = load_sequence(condition_file);
    if (src.frames != lm.model.frames) src = resize_frames(src, lm.model.frames);
    const TokenGrid grid = patchify(normalize(src, lm.stats), lm.model.patch_len);
    cond = encode_condition(lm.ckpt.params, lm.model, grid, ConditionMode::assembled);
  }
  const auto seqs = sample(count, lm.ckpt.params, lm.model, lm.schedule,
                           rc.sampler_config(), lm.stats, cond ? &*cond : nullptr, rng);
  fs::create_directories(out);
  json files = json::array();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "gen_%05zu.skl", i);
    save_sequence(seqs[i], out / name);
    files.push_back(name);
  }
  std::cerr << "generate: wrote " << seqs.size() << " sequences to " << out << "\n";
  write_report(out, "generate", rc, seed, json{{"sequences", seqs.size()}},
               json{{"files", files}, {"mode", cond ? "conditional" : "unconditional"}});
  return 0;
}

int cmd_inpaint(const RunConfig& rc, const fs::path& ckpt, const fs::path& input,
                const fs::path& out, std::uint64_t seed, const std::string& occ_spec) {
  const LoadedModel lm = load_model(ckpt);
  SkeletonSequence original = load_sequence(input);
  if (original.frames != lm.model.frames) original = resize_frames(original, lm.model.frames);
  const OcclusionSpec spec = parse_occlusion(occ_spec, original.frames);
  const Occlusion occ = apply_occlusion(original, spec);

  Rng rng(seed);
  const SkeletonSequence restored =
      inpaint(occ.occluded, occ.observed, lm.ckpt.params, lm.model, lm.schedule,
              rc.inpaint_config(), lm.stats, rng);

  std::vector<std::uint8_t> hidden(occ.observed.size());
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = occ.observed[i] ? 0 : 1;
  const double err = mpjpe(restored, original, &hidden);
  const double zero_fill = mpjpe(occ.occluded, original, &hidden);

  fs::create_directories(out);
  save_sequence(occ.occluded, out / "occluded.skl");
  save_sequence(restored, out / "inpainted.skl");
  std::cerr << "inpaint: MPJPE " << err << " (zero-fill baseline " << zero_fill << ")\n";
  write_report(out, "inpaint", rc, seed,
               json{{"mpjpe_occluded", err}, {"mpjpe_zero_fill", zero_fill}},
               json{{"occlusion", occ_spec}});
  return 0;
}

int cmd_augment(const RunConfig& rc, const fs::path& ckpt, const fs::path& data,
                const fs::path& out, std::uint64_t seed, double lambda, int t_s,
                bool force) {
  require_empty_or_force(out, force);
  const LoadedModel lm = load_model(ckpt);
  const Dataset ds = open_dataset(data);
  const auto train = ds.load_split("train");
  std::vector<std::string> train_files;
  for (const auto& e : ds.entries)
    if (e.split == "train") train_files.push_back(e.file);
  Rng rng(seed);
  const AugmentedSet aug = build_augmented_set(train, lambda, t_s, lm.ckpt.params,
                                               lm.model, lm.schedule, lm.stats, rng);
  fs::create_directories(out);
  json manifest = json::array();
  for (std::size_t i = 0; i < aug.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "aug_%05zu.skl", i);
    save_sequence(aug.samples[i], out / name);
    manifest.push_back({{"file", name},
                        {"source_file", train_files[aug.source_index[i]]},
                        {"seed", seed},
                        {"t_s", t_s}});
  }
  {
    std::ofstream os(out / "augment_manifest.json");
    os << manifest.dump(2) << "\n";
  }
  std::cerr << "augment: wrote " << aug.samples.size() << " sequences to " << out << "\n";
  write_report(out, "augment", rc, seed,
               json{{"augmented", aug.samples.size()}, {"source", train.size()}},
               json{{"lambda", lambda}, {"t_s", t_s}});
  return 0;
}

int cmd_evalgen(const RunConfig& rc, const fs::path& ckpt, const fs::path& real_dir,
                const fs::path& gen_dir, const fs::path& out, std::uint64_t seed) {
  const LoadedModel lm = load_model(ckpt);
  const auto real = load_skl_dir(real_dir);
  const auto gen = load_skl_dir(gen_dir);
  const FeatureSet fr = extract_features(real, lm.ckpt.params, lm.model, lm.stats);
  const FeatureSet fg = extract_features(gen, lm.ckpt.params, lm.model, lm.stats);
  Rng rng(seed);
  const double fid_v = fid(fr.features, fg.features);
  const double kid_v = kid(fr.features, fg.features);
  const double div_v = diversity(fg.features, 100, rng);
  const auto [prec, rec] = precision_recall(fr.features, fg.features, 3);
  std::cerr << "evalgen: FID " << fid_v << ", KID " << kid_v << ", diversity " << div_v
            << ", precision " << prec << ", recall " << rec << "\n";
  write_report(out, "evalgen", rc, seed,
               json{{"fid", fid_v},
                    {"kid", kid_v},
                    {"diversity", div_v},
                    {"precision", prec},
                    {"recall", rec}},
               json{{"real_sequences", real.size()}, {"gen_sequences", gen.size()}});
  return 0;
}

int cmd_gradcheck(const RunConfig& rc, const fs::path& out, std::uint64_t seed,
                  double tolerance) {
  const GradCheckReport rep = grad_check(tolerance, seed);
  std::cerr << "gradcheck: " << rep.within_tolerance << "/" << rep.sampled
            << " coordinates within " << tolerance << " (worst " << rep.worst_tensor
            << " at " << rep.worst_rel_err << ") -> " << (rep.passed ? "pass" : "FAIL")
            << "\n";
  write_report(out, "gradcheck", rc, seed,
               json{{"sampled", rep.sampled},
                    {"within_tolerance", rep.within_tolerance},
                    {"fraction", rep.fraction},
                    {"worst_rel_err", rep.worst_rel_err}},
               json{{"worst_tensor", rep.worst_tensor}, {"passed", rep.passed}});
  return rep.passed ? 0 : 1;
}

int cmd_schedule_dump(const RunConfig& rc, const fs::path& out) {
  const json& d = rc.tree.at("diffusion");
  const NoiseSchedule s =
      build_schedule(schedule_kind_from_name(d.at("kind").get<std::string>()),
                     d.at("T").get<int>(), d.at("tau").get<double>());
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) throw IoError("cannot write " + out.string());
  os << schedule_csv(s);
  std::cerr << "schedule-dump: wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"macdiff: masked conditional diffusion for skeleton sequences"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
  app.add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "config override key.path=value (repeatable)");
  app.add_option("--seed", seed, "RNG seed")->each([&](const std::string&) { seed_given = true; });
  app.add_flag("--force", force, "overwrite non-empty output directories");

  std::string out, data, ckpt, resume, init_from, input, condition_file, occ_spec;
  std::string real_dir, gen_dir;
  int classes = 4, per_class = 64, frames = 120, joints = 25, count = 8, t_s = -1;
  double fraction = 1.0, lambda = -1.0, tolerance = 1e-4;

  auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  synth->add_option("--out", out)->required();
  synth->add_option("--classes", classes);
  synth->add_option("--per-class", per_class);
  synth->add_option("--frames", frames);
  synth->add_option("--joints", joints);

  auto* train = app.add_subcommand("train", "pre-train the masked conditional diffusion model");
  train->add_option("--data", data)->required();
  train->add_option("--out", out)->required();
  train->add_option("--resume", resume, "checkpoint base path to resume from");
  train->add_option("--init-from", init_from, "checkpoint base path to warm-start a new stage");

  auto* probe = app.add_subcommand("probe", "linear evaluation of frozen encoder features");
  probe->add_option("--ckpt", ckpt)->required();
  probe->add_option("--data", data)->required();
  probe->add_option("--out", out)->required();

  auto* finetune_cmd = app.add_subcommand("finetune", "supervised fine-tuning with an MLP head");
  finetune_cmd->add_option("--ckpt", ckpt)->required();
  finetune_cmd->add_option("--data", data)->required();
  finetune_cmd->add_option("--out", out)->required();
  finetune_cmd->add_option("--fraction", fraction, "labeled fraction of the training split");

  auto* semi = app.add_subcommand("semi", "semi-supervised fine-tuning with augmentation");
  semi->add_option("--ckpt", ckpt)->required();
  semi->add_option("--data", data)->required();
  semi->add_option("--out", out)->required();
  semi->add_option("--fraction", fraction)->required();
  semi->add_option("--lambda", lambda, "augment-to-real ratio");
  semi->add_option("--ts", t_s, "one-step denoising start timestep");

  auto* generate = app.add_subcommand("generate", "DDIM sampling");
  generate->add_option("--ckpt", ckpt)->required();
  generate->add_option("--out", out)->required();
  generate->add_option("-n,--count", count);
  generate->add_option("--condition", condition_file,
                       "sequence whose representation guides sampling");

  auto* inpaint_cmd = app.add_subcommand("inpaint", "occlusion recovery by diffusion inpainting");
  inpaint_cmd->add_option("--ckpt", ckpt)->required();
  inpaint_cmd->add_option("--input", input)->required()->check(CLI::ExistingFile);
  inpaint_cmd->add_option("--out", out)->required();
  inpaint_cmd->add_option("--occlusion", occ_spec, "frames:START:LEN or part:NAME")->required();

  auto* augment_cmd = app.add_subcommand("augment", "build a diffusion-augmented dataset");
  augment_cmd->add_option("--ckpt", ckpt)->required();
  augment_cmd->add_option("--data", data)->required();
  augment_cmd->add_option("--out", out)->required();
  augment_cmd->add_option("--lambda", lambda);
  augment_cmd->add_option("--ts", t_s);

  auto* evalgen = app.add_subcommand("evalgen", "generative metrics between two sequence sets");
  evalgen->add_option("--ckpt", ckpt)->required();
  evalgen->add_option("--real", real_dir)->required();
  evalgen->add_option("--gen", gen_dir)->required();
  evalgen->add_option("--out", out)->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--out", out)->required();
  gradcheck->add_option("--tolerance", tolerance);

  auto* sched = app.add_subcommand("schedule-dump", "dump the noise schedule as CSV");
  sched->add_option("--out", out)->required();

  // let --config/--set/--seed/--force appear after the subcommand name
  for (CLI::App* sub : {synth, train, probe, finetune_cmd, semi, generate, inpaint_cmd,
                        augment_cmd, evalgen, gradcheck, sched})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig rc = RunConfig::load(config_file, overrides);
    if (seed_given) rc.tree["train"]["seed"] = seed;
    const std::uint64_t run_seed = rc.tree["train"]["seed"].get<std::uint64_t>();

    if (*synth) return cmd_synth(rc, out, run_seed, force, classes, per_class, frames, joints);
    if (*train) return cmd_train(rc, data, out, resume, init_from);
    if (*probe) return cmd_probe(rc, ckpt, data, out, run_seed);
    if (*finetune_cmd) return cmd_finetune(rc, ckpt, data, out, run_seed, fraction);
    if (*semi) {
      if (lambda < 0) lambda = rc.augment_lambda();
      if (t_s < 0) t_s = rc.augment_t_s();
      return cmd_semi(rc, ckpt, data, out, run_seed, fraction, lambda, t_s);
    }
    if (*generate) return cmd_generate(rc, ckpt, out, run_seed, count, condition_file, force);
    if (*inpaint_cmd) return cmd_inpaint(rc, ckpt, input, out, run_seed, occ_spec);
    if (*augment_cmd) {
      if (lambda < 0) lambda = rc.augment_lambda();
      if (t_s < 0) t_s = rc.augment_t_s();
      return cmd_augment(rc, ckpt, data, out, run_seed, lambda, t_s, force);
    }
    if (*evalgen) return cmd_evalgen(rc, ckpt, real_dir, gen_dir, out, run_seed);
    if (*gradcheck) return cmd_gradcheck(rc, out, run_seed, tolerance);
    if (*sched) return cmd_schedule_dump(rc, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: unexpected: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
