#include "masdt/config.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "masdt/utils.hpp"

namespace masdt {

namespace {

using json = nlohmann::json;

json vit_to_json(const ViTConfig& v) {
  return json{{"image_size", v.image_size},   {"patch_size", v.patch_size},
              {"in_channels", v.in_channels}, {"embed_dim", v.embed_dim},
              {"depth", v.depth},             {"num_heads", v.num_heads},
              {"mlp_ratio", v.mlp_ratio},     {"drop_path_rate", v.drop_path_rate},
              {"mean_pool", v.mean_pool}};
}

void vit_from_json(const json& j, ViTConfig& v) {
  v.image_size = j.at("image_size").get<std::size_t>();
  v.patch_size = j.at("patch_size").get<std::size_t>();
  v.in_channels = j.at("in_channels").get<std::size_t>();
  v.embed_dim = j.at("embed_dim").get<std::size_t>();
  v.depth = j.at("depth").get<std::size_t>();
  v.num_heads = j.at("num_heads").get<std::size_t>();
  v.mlp_ratio = j.at("mlp_ratio").get<double>();
  v.drop_path_rate = j.at("drop_path_rate").get<double>();
  v.mean_pool = j.at("mean_pool").get<bool>();
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["out"] = c.out;
  j["paths"] = {{"data", c.paths.data},
                {"flow", c.paths.flow},
                {"checkpoints", c.paths.checkpoints},
                {"report", c.paths.report}};
  j["synth"] = {{"clips", c.synth.clips},
                {"frames", c.synth.frames},
                {"height", c.synth.height},
                {"width", c.synth.width},
                {"fake_fraction", c.synth.fake_fraction}};
  j["vit_spatial"] = vit_to_json(c.vit_spatial);
  j["vit_temporal"] = vit_to_json(c.vit_temporal);
  j["mae"] = {{"decoder_dim", c.mae_decoder_dim},
              {"decoder_depth", c.mae_decoder_depth},
              {"decoder_heads", c.mae_decoder_heads},
              {"mask_ratio", c.mae_mask_ratio},
              {"norm_per_patch", c.mae_norm_per_patch},
              {"loss_all_patches", c.mae_loss_all_patches}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"lr", c.pretrain.lr},
                   {"weight_decay", c.pretrain.weight_decay}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"label_smoothing", c.train.label_smoothing},
                {"mixup_enabled", c.train.mixup_enabled},
                {"mixup_alpha", c.train.mixup_alpha},
                {"cutmix_prob", c.train.cutmix_prob},
                {"cutmix_switch_prob", c.train.cutmix_switch_prob},
                {"cutmix_alpha", c.train.cutmix_alpha},
                {"lr", c.train.lr},
                {"weight_decay", c.train.weight_decay},
                {"layer_decay", c.train.layer_decay}};
  j["flow"] = {{"lambda", c.flow.lambda},
               {"iterations", c.flow.iterations},
               {"levels", c.flow.levels},
               {"downscale", c.flow.downscale},
               {"warps_per_level", c.flow.warps_per_level},
               {"max_displacement", c.flow.max_displacement}};
  j["fusion"] = {{"alpha", c.fusion_alpha}, {"mode", c.fusion_mode}};
  j["split"] = {{"train", c.split.train},
                {"val", c.split.val},
                {"test", c.split.test},
                {"stratify", c.split.stratify}};
  return j;
}

void from_json_obj(const json& j, RunConfig& c) {
  c.seed = j.at("seed").get<std::uint64_t>();
  c.jobs = j.at("jobs").get<std::size_t>();
  c.out = j.at("out").get<std::string>();
  const json& paths = j.at("paths");
  c.paths.data = paths.at("data").get<std::string>();
  c.paths.flow = paths.at("flow").get<std::string>();
  c.paths.checkpoints = paths.at("checkpoints").get<std::string>();
  c.paths.report = paths.at("report").get<std::string>();
  const json& synth = j.at("synth");
  c.synth.clips = synth.at("clips").get<std::size_t>();
  c.synth.frames = synth.at("frames").get<std::size_t>();
  c.synth.height = synth.at("height").get<std::size_t>();
  c.synth.width = synth.at("width").get<std::size_t>();
  c.synth.fake_fraction = synth.at("fake_fraction").get<double>();
  vit_from_json(j.at("vit_spatial"), c.vit_spatial);
  vit_from_json(j.at("vit_temporal"), c.vit_temporal);
  const json& mae = j.at("mae");
  c.mae_decoder_dim = mae.at("decoder_dim").get<std::size_t>();
  c.mae_decoder_depth = mae.at("decoder_depth").get<std::size_t>();
  c.mae_decoder_heads = mae.at("decoder_heads").get<std::size_t>();
  c.mae_mask_ratio = mae.at("mask_ratio").get<double>();
  c.mae_norm_per_patch = mae.at("norm_per_patch").get<bool>();
  c.mae_loss_all_patches = mae.at("loss_all_patches").get<bool>();
  const json& pre = j.at("pretrain");
  c.pretrain.epochs = pre.at("epochs").get<std::size_t>();
  c.pretrain.batch_size = pre.at("batch_size").get<std::size_t>();
  c.pretrain.lr = pre.at("lr").get<double>();
  c.pretrain.weight_decay = pre.at("weight_decay").get<double>();
  const json& train = j.at("train");
  c.train.epochs = train.at("epochs").get<std::size_t>();
  c.train.batch_size = train.at("batch_size").get<std::size_t>();
  c.train.label_smoothing = train.at("label_smoothing").get<double>();
  c.train.mixup_enabled = train.at("mixup_enabled").get<bool>();
  c.train.mixup_alpha = train.at("mixup_alpha").get<double>();
  c.train.cutmix_prob = train.at("cutmix_prob").get<double>();
  c.train.cutmix_switch_prob = train.at("cutmix_switch_prob").get<double>();
  c.train.cutmix_alpha = train.at("cutmix_alpha").get<double>();
  c.train.lr = train.at("lr").get<double>();
  c.train.weight_decay = train.at("weight_decay").get<double>();
  c.train.layer_decay = train.at("layer_decay").get<double>();
  const json& flow = j.at("flow");
  c.flow.lambda = flow.at("lambda").get<double>();
  c.flow.iterations = flow.at("iterations").get<std::size_t>();
  c.flow.levels = flow.at("levels").get<std::size_t>();
  c.flow.downscale = flow.at("downscale").get<double>();
  c.flow.warps_per_level = flow.at("warps_per_level").get<std::size_t>();
  c.flow.max_displacement = flow.at("max_displacement").get<double>();
  const json& fusion = j.at("fusion");
  c.fusion_alpha = fusion.at("alpha").get<double>();
  c.fusion_mode = fusion.at("mode").get<std::string>();
  const json& split = j.at("split");
  c.split.train = split.at("train").get<double>();
  c.split.val = split.at("val").get<double>();
  c.split.test = split.at("test").get<double>();
  c.split.stratify = split.at("stratify").get<bool>();
}

// Copies src into dst, refusing keys the defaults do not have and scalar
// types that do not line up. Dotted paths make the errors actionable.
void merge_strict(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) {
    throw std::runtime_error("config: " + (path.empty() ? std::string("top level") : path) +
                             " must be a JSON object");
  }
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw std::runtime_error("config: unknown key " + key);
    json& d = dst[it.key()];
    const json& s = it.value();
    if (d.is_object()) {
      merge_strict(d, s, key);
    } else if (d.is_boolean()) {
      if (!s.is_boolean()) throw std::runtime_error("config: " + key + " must be a boolean");
      d = s;
    } else if (d.is_string()) {
      if (!s.is_string()) throw std::runtime_error("config: " + key + " must be a string");
      d = s;
    } else if (d.is_number_integer() || d.is_number_unsigned()) {
      if (!(s.is_number_integer() || s.is_number_unsigned())) {
        throw std::runtime_error("config: " + key + " must be an integer");
      }
      if (s.is_number_integer() && s.get<long long>() < 0) {
        throw std::runtime_error("config: " + key + " must be nonnegative");
      }
      d = s;
    } else if (d.is_number_float()) {
      if (!s.is_number()) throw std::runtime_error("config: " + key + " must be a number");
      d = s.get<double>();
    } else {
      throw std::logic_error("config: unhandled default type at " + key);
    }
  }
}

void set_override(json& root, const std::string& key, const std::string& value) {
  json* node = &root;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!node->is_object() || !node->contains(part)) {
      throw std::runtime_error("config: unknown key " + key);
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (node->is_object()) {
    throw std::runtime_error("config: " + key + " is a section, not a value");
  }
  try {
    if (node->is_boolean()) {
      if (value == "true" || value == "1") {
        *node = true;
      } else if (value == "false" || value == "0") {
        *node = false;
      } else {
        throw std::runtime_error("expected true or false");
      }
    } else if (node->is_string()) {
      *node = value;
    } else if (node->is_number_integer() || node->is_number_unsigned()) {
      std::size_t used = 0;
      const unsigned long long parsed = std::stoull(value, &used);
      if (used != value.size()) throw std::runtime_error("trailing characters");
      *node = parsed;
    } else {
      std::size_t used = 0;
      const double parsed = std::stod(value, &used);
      if (used != value.size()) throw std::runtime_error("trailing characters");
      *node = parsed;
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("config: bad value \"" + value + "\" for " + key + ": " + e.what());
  }
}

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw std::runtime_error("config: " + key + " " + what);
}

void check_vit(const ViTConfig& v, const std::string& section) {
  check(v.image_size > 0, section + ".image_size", "must be positive");
  check(v.patch_size > 0, section + ".patch_size", "must be positive");
  check(v.image_size % v.patch_size == 0, section + ".patch_size", "must divide image_size");
  check(v.in_channels > 0, section + ".in_channels", "must be positive");
  check(v.embed_dim > 0 && v.embed_dim % 4 == 0, section + ".embed_dim", "must be a positive multiple of 4");
  check(v.num_heads > 0 && v.embed_dim % v.num_heads == 0, section + ".num_heads",
        "must divide embed_dim");
  check(v.depth > 0, section + ".depth", "must be positive");
  check(v.mlp_ratio > 0.0, section + ".mlp_ratio", "must be positive");
  check(v.drop_path_rate >= 0.0 && v.drop_path_rate < 1.0, section + ".drop_path_rate",
        "must be in [0, 1)");
}

}  // namespace

void validate_config(const RunConfig& c) {
  check(c.jobs >= 1, "jobs", "must be at least 1");
  check(!c.out.empty(), "out", "must not be empty");
  check(!c.paths.data.empty(), "paths.data", "must not be empty");
  check(!c.paths.flow.empty(), "paths.flow", "must not be empty");
  check(!c.paths.checkpoints.empty(), "paths.checkpoints", "must not be empty");
  check(!c.paths.report.empty(), "paths.report", "must not be empty");
  check(c.synth.clips >= 2, "synth.clips", "must be at least 2");
  check(c.synth.frames >= 2, "synth.frames", "must be at least 2");
  check(c.synth.height >= 16, "synth.height", "must be at least 16");
  check(c.synth.width >= 16, "synth.width", "must be at least 16");
  check(c.synth.fake_fraction >= 0.0 && c.synth.fake_fraction <= 1.0, "synth.fake_fraction",
        "must be in [0, 1]");
  check_vit(c.vit_spatial, "vit_spatial");
  check_vit(c.vit_temporal, "vit_temporal");
  check(c.synth.height == c.vit_spatial.image_size && c.synth.width == c.vit_spatial.image_size,
        "vit_spatial.image_size", "must match synth frame size");
  check(c.vit_temporal.image_size == c.vit_spatial.image_size, "vit_temporal.image_size",
        "must match vit_spatial.image_size");
  check(c.mae_decoder_dim > 0 && c.mae_decoder_dim % 4 == 0, "mae.decoder_dim",
        "must be a positive multiple of 4");
  check(c.mae_decoder_heads > 0 && c.mae_decoder_dim % c.mae_decoder_heads == 0, "mae.decoder_heads",
        "must divide decoder_dim");
  check(c.mae_decoder_depth > 0, "mae.decoder_depth", "must be positive");
  check(c.mae_mask_ratio >= 0.0 && c.mae_mask_ratio < 1.0, "mae.mask_ratio", "must be in [0, 1)");
  check(c.pretrain.batch_size >= 1, "pretrain.batch_size", "must be at least 1");
  check(c.pretrain.lr > 0.0, "pretrain.lr", "must be positive");
  check(c.pretrain.weight_decay >= 0.0, "pretrain.weight_decay", "must be nonnegative");
  check(c.train.batch_size >= 1, "train.batch_size", "must be at least 1");
  check(c.train.label_smoothing >= 0.0 && c.train.label_smoothing < 1.0, "train.label_smoothing",
        "must be in [0, 1)");
  check(c.train.mixup_alpha > 0.0, "train.mixup_alpha", "must be positive");
  check(c.train.cutmix_prob >= 0.0 && c.train.cutmix_prob <= 1.0, "train.cutmix_prob",
        "must be in [0, 1]");
  check(c.train.cutmix_switch_prob >= 0.0 && c.train.cutmix_switch_prob <= 1.0,
        "train.cutmix_switch_prob", "must be in [0, 1]");
  check(c.train.cutmix_alpha > 0.0, "train.cutmix_alpha", "must be positive");
  check(c.train.lr > 0.0, "train.lr", "must be positive");
  check(c.train.weight_decay >= 0.0, "train.weight_decay", "must be nonnegative");
  check(c.train.layer_decay > 0.0 && c.train.layer_decay <= 1.0, "train.layer_decay",
        "must be in (0, 1]");
  check(c.flow.lambda > 0.0, "flow.lambda", "must be positive");
  check(c.flow.iterations >= 1, "flow.iterations", "must be at least 1");
  check(c.flow.levels >= 1, "flow.levels", "must be at least 1");
  check(c.flow.downscale > 0.0 && c.flow.downscale < 1.0, "flow.downscale", "must be in (0, 1)");
  check(c.flow.warps_per_level >= 1, "flow.warps_per_level", "must be at least 1");
  check(c.flow.max_displacement > 0.0, "flow.max_displacement", "must be positive");
  check(c.fusion_alpha >= 0.0 && c.fusion_alpha <= 1.0, "fusion.alpha", "must be in [0, 1]");
  check(c.fusion_mode == "score" || c.fusion_mode == "feature" || c.fusion_mode == "spatial_only",
        "fusion.mode", "must be score, feature, or spatial_only");
  check(c.split.train > 0.0, "split.train", "must be positive");
  check(c.split.val > 0.0, "split.val", "must be positive");
  check(c.split.test > 0.0, "split.test", "must be positive");
  check(std::abs(c.split.train + c.split.val + c.split.test - 1.0) <= 1e-9, "split.train",
        "val and test must sum to 1");
}

RunConfig parse_config(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  json effective = to_json(RunConfig{});
  if (!path.empty()) {
    const std::string text = read_file(path);
    json user;
    try {
      user = json::parse(text);
    } catch (const json::exception& e) {
      throw std::runtime_error("config: " + path + " is not valid JSON: " + std::string(e.what()));
    }
    merge_strict(effective, user, "");
  }
  for (const auto& [key, value] : overrides) set_override(effective, key, value);
  RunConfig cfg;
  from_json_obj(effective, cfg);
  validate_config(cfg);
  return cfg;
}

std::string canonical_config_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string config_fingerprint(const RunConfig& cfg) {
  return to_hex(fnv1a64(canonical_config_json(cfg)));
}

std::string vit_fingerprint(const ViTConfig& cfg) {
  return to_hex(fnv1a64(vit_to_json(cfg).dump()));
}

MAEConfig RunConfig::mae_config(const ViTConfig& encoder) const {
  MAEConfig m;
  m.encoder = encoder;
  m.decoder_dim = mae_decoder_dim;
  m.decoder_depth = mae_decoder_depth;
  m.decoder_heads = mae_decoder_heads;
  m.mask_ratio = mae_mask_ratio;
  m.norm_per_patch = mae_norm_per_patch;
  m.loss_all_patches = mae_loss_all_patches;
  return m;
}

PretrainConfig RunConfig::pretrain_config() const {
  PretrainConfig p;
  p.epochs = pretrain.epochs;
  p.batch_size = pretrain.batch_size;
  p.opt.lr = pretrain.lr;
  p.opt.weight_decay = pretrain.weight_decay;
  p.opt.layer_decay = 1.0;  // decay schedules are a fine-tuning device
  return p;
}

TrainConfig RunConfig::train_config(std::uint64_t run_seed) const {
  TrainConfig t;
  t.epochs = train.epochs;
  t.batch_size = train.batch_size;
  t.label_smoothing = train.label_smoothing;
  t.mixup_enabled = train.mixup_enabled;
  t.mixup_alpha = train.mixup_alpha;
  t.cutmix_prob = train.cutmix_prob;
  t.cutmix_switch_prob = train.cutmix_switch_prob;
  t.cutmix_alpha = train.cutmix_alpha;
  t.opt.lr = train.lr;
  t.opt.weight_decay = train.weight_decay;
  t.opt.layer_decay = train.layer_decay;
  t.seed = run_seed;
  return t;
}

FusionConfig RunConfig::fusion_config() const {
  FusionConfig f;
  f.alpha = fusion_alpha;
  f.mode = fusion_mode_from_name(fusion_mode);
  return f;
}

SplitSpec RunConfig::split_spec(std::uint64_t run_seed) const {
  SplitSpec s;
  s.train = split.train;
  s.val = split.val;
  s.test = split.test;
  s.stratify = split.stratify;
  s.seed = run_seed;
  return s;
}

std::string RunConfig::data_dir() const {
  return (std::filesystem::path(out) / paths.data).string();
}
std::string RunConfig::flow_dir() const {
  return (std::filesystem::path(out) / paths.flow).string();
}
std::string RunConfig::checkpoint_dir() const {
  return (std::filesystem::path(out) / paths.checkpoints).string();
}
std::string RunConfig::report_dir() const {
  return (std::filesystem::path(out) / paths.report).string();
}

}  // namespace masdt
