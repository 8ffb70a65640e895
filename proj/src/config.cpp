#include "macdiff/config.hpp"

#include <fstream>

namespace macdiff {

using nlohmann::json;

json RunConfig::defaults() {
  return json{
      {"train",
       {{"epochs", 100},
        {"max_steps", 0},
        {"batch_size", 128},
        {"lr_start", 1e-3},
        {"lr_end", 1e-5},
        {"weight_decay", 0.05},
        {"grad_clip", 1.0},
        {"seed", 0},
        {"checkpoint_every_epochs", 0},
        {"crop_ratio_min", 0.5},
        {"crop_ratio_max", 1.0},
        {"rotation_max", M_PI / 6.0},
        {"noise_sigma", 0.005},
        {"condition_mode", "assembled"},
        {"freeze_encoder", false}}},
      {"model",
       {{"embed_dim", 256},
        {"mlp_dim", 1024},
        {"heads", 8},
        {"encoder_layers", 8},
        {"decoder_layers", 5},
        {"patch_len", 4},
        {"frames", 120},
        {"joints", 25},
        {"condition_dropout", 0.1}}},
      {"mask",
       {{"strategy", "random"},
        {"ratio", 0.9},
        {"tube_length", 5},
        {"keep_joints", 8},
        {"keep_patches", 10}}},
      {"diffusion", {{"T", 1000}, {"kind", "inverse_cosine"}, {"tau", 0.0}}},
      {"sampler", {{"num_steps", 50}, {"resample_count", 1}, {"clip_x0", 6.0}}},
      {"augment", {{"t_s", 500}, {"lambda", 1.0}}},
      {"probe", {{"epochs", 100}, {"lr", 0.1}, {"momentum", 0.9}, {"batch_size", 128}}},
      {"finetune",
       {{"epochs", 100},
        {"lr_start", 3e-4},
        {"lr_end", 1e-5},
        {"weight_decay", 0.05},
        {"batch_size", 32},
        {"fraction", 1.0},
        {"freeze_encoder", false}}},
  };
}

namespace {

void merge_checked(json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object())
    throw ConfigError("config: expected an object at '" + (path.empty() ? "<root>" : path) + "'");
  for (const auto& [key, value] : overlay.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + full + "'");
    if (base[key].is_object()) {
      merge_checked(base[key], value, full);
    } else {
      base[key] = value;
    }
  }
}

json parse_override_value(const std::string& text) {
  // numbers and booleans parse as JSON; anything else is a string
  const json parsed = json::parse(text, nullptr, false);
  if (!parsed.is_discarded() && !parsed.is_object() && !parsed.is_array()) return parsed;
  return json(text);
}

void apply_override(json& tree, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw ConfigError("config: override must have the form key.path=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string value = spec.substr(eq + 1);
  json* node = &tree;
  std::size_t begin = 0;
  std::vector<std::string> parts;
  while (begin <= path.size()) {
    const auto dot = path.find('.', begin);
    parts.push_back(path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin));
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      throw ConfigError("config: unknown key '" + path + "'");
    node = &(*node)[parts[i]];
  }
  if (!node->contains(parts.back()) || (*node)[parts.back()].is_object())
    throw ConfigError("config: unknown key '" + path + "'");
  (*node)[parts.back()] = parse_override_value(value);
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& config_file,
                          const std::vector<std::string>& overrides) {
  json tree = defaults();
  if (!config_file.empty()) {
    std::ifstream is(config_file);
    if (!is) throw IoError("config: cannot open " + config_file.string());
    json file_tree;
    try {
      is >> file_tree;
    } catch (const json::exception& e) {
      throw FormatError("config: malformed JSON in " + config_file.string() + ": " + e.what());
    }
    merge_checked(tree, file_tree, "");
  }
  for (const auto& o : overrides) apply_override(tree, o);
  RunConfig rc;
  rc.tree = std::move(tree);
  return rc;
}

RunConfig RunConfig::from_json(const json& j) {
  json tree = defaults();
  merge_checked(tree, j, "");
  RunConfig rc;
  rc.tree = std::move(tree);
  return rc;
}

ModelConfig model_config_from_json(const json& m) {
  ModelConfig cfg;
  cfg.embed_dim = m.at("embed_dim").get<int>();
  cfg.mlp_dim = m.at("mlp_dim").get<int>();
  cfg.heads = m.at("heads").get<int>();
  cfg.encoder_layers = m.at("encoder_layers").get<int>();
  cfg.decoder_layers = m.at("decoder_layers").get<int>();
  cfg.patch_len = m.at("patch_len").get<int>();
  cfg.frames = m.at("frames").get<int>();
  cfg.joints = m.at("joints").get<int>();
  cfg.condition_dropout = m.at("condition_dropout").get<double>();
  cfg.validate();
  return cfg;
}

ModelConfig RunConfig::model_config() const { return model_config_from_json(tree.at("model")); }

MaskSpec RunConfig::mask_spec() const {
  const json& m = tree.at("mask");
  MaskSpec spec;
  spec.strategy = mask_strategy_from_name(m.at("strategy").get<std::string>());
  spec.ratio = m.at("ratio").get<double>();
  spec.tube_length = m.at("tube_length").get<int>();
  spec.keep_joints = m.at("keep_joints").get<int>();
  spec.keep_patches = m.at("keep_patches").get<int>();
  return spec;
}

TrainConfig RunConfig::train_config() const {
  const json& t = tree.at("train");
  TrainConfig cfg;
  cfg.epochs = t.at("epochs").get<int>();
  cfg.max_steps = t.at("max_steps").get<long>();
  cfg.batch_size = t.at("batch_size").get<int>();
  cfg.lr_start = t.at("lr_start").get<double>();
  cfg.lr_end = t.at("lr_end").get<double>();
  cfg.weight_decay = t.at("weight_decay").get<double>();
  cfg.grad_clip = t.at("grad_clip").get<double>();
  cfg.seed = t.at("seed").get<std::uint64_t>();
  cfg.checkpoint_every_epochs = t.at("checkpoint_every_epochs").get<int>();
  cfg.crop_ratio_min = t.at("crop_ratio_min").get<double>();
  cfg.crop_ratio_max = t.at("crop_ratio_max").get<double>();
  cfg.rotation_max = t.at("rotation_max").get<double>();
  cfg.noise_sigma = t.at("noise_sigma").get<double>();
  cfg.condition_mode = condition_mode_from_name(t.at("condition_mode").get<std::string>());
  cfg.freeze_encoder = t.at("freeze_encoder").get<bool>();
  cfg.mask = mask_spec();
  const json& d = tree.at("diffusion");
  cfg.timesteps = d.at("T").get<int>();
  cfg.schedule_kind = schedule_kind_from_name(d.at("kind").get<std::string>());
  cfg.tau = d.at("tau").get<double>();
  cfg.model = model_config();
  cfg.validate();
  return cfg;
}

SamplerConfig RunConfig::sampler_config() const {
  SamplerConfig s;
  s.num_steps = tree.at("sampler").at("num_steps").get<int>();
  s.clip_x0 = tree.at("sampler").at("clip_x0").get<double>();
  return s;
}

InpaintConfig RunConfig::inpaint_config() const {
  InpaintConfig s;
  s.num_steps = tree.at("sampler").at("num_steps").get<int>();
  s.resample_count = tree.at("sampler").at("resample_count").get<int>();
  s.clip_x0 = tree.at("sampler").at("clip_x0").get<double>();
  return s;
}

ProbeConfig RunConfig::probe_config() const {
  const json& p = tree.at("probe");
  ProbeConfig cfg;
  cfg.epochs = p.at("epochs").get<int>();
  cfg.lr = p.at("lr").get<double>();
  cfg.momentum = p.at("momentum").get<double>();
  cfg.batch_size = p.at("batch_size").get<int>();
  return cfg;
}

FinetuneConfig RunConfig::finetune_config() const {
  const json& f = tree.at("finetune");
  FinetuneConfig cfg;
  cfg.epochs = f.at("epochs").get<int>();
  cfg.lr_start = f.at("lr_start").get<double>();
  cfg.lr_end = f.at("lr_end").get<double>();
  cfg.weight_decay = f.at("weight_decay").get<double>();
  cfg.batch_size = f.at("batch_size").get<int>();
  cfg.freeze_encoder = f.at("freeze_encoder").get<bool>();
  return cfg;
}

int RunConfig::augment_t_s() const { return tree.at("augment").at("t_s").get<int>(); }
double RunConfig::augment_lambda() const { return tree.at("augment").at("lambda").get<double>(); }

std::string RunConfig::fingerprint() const { return hex64(fnv1a(tree.dump())); }

json stats_to_json(const NormalizationStats& stats) {
  return json{{"mean", stats.mean}, {"std", stats.stddev}};
}

NormalizationStats stats_from_json(const json& j) {
  NormalizationStats s;
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = j.at("mean")[c].get<double>();
    s.stddev[c] = j.at("std")[c].get<double>();
  }
  return s;
}

}  // namespace macdiff
