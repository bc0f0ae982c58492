#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "masdt/data.hpp"
#include "masdt/detect.hpp"
#include "masdt/flow.hpp"
#include "masdt/mae.hpp"
#include "masdt/vit.hpp"

namespace masdt {

struct SynthConfig {
  std::size_t clips = 256;
  std::size_t frames = 6;
  std::size_t height = 32;
  std::size_t width = 32;
  double fake_fraction = 0.5;
};

struct PretrainRun {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double lr = 5e-4;
  double weight_decay = 0.05;
};

struct TrainRun {
  std::size_t epochs = 4;
  std::size_t batch_size = 64;
  double label_smoothing = 0.1;
  bool mixup_enabled = true;
  double mixup_alpha = 1.0;
  double cutmix_prob = 1.0;
  double cutmix_switch_prob = 0.5;
  double cutmix_alpha = 1.0;
  double lr = 5e-4;
  double weight_decay = 0.05;
  double layer_decay = 0.8;
};

// Dyadic fractions so the default 256 clips split exactly 200/6/50.
struct SplitRun {
  double train = 0.78125;
  double val = 0.0234375;
  double test = 0.1953125;
  bool stratify = true;
};

struct PathsConfig {
  std::string data = "data";
  std::string flow = "flow";
  std::string checkpoints = "checkpoints";
  std::string report = "report";
};

// The one config object every subcommand reads. Every field has a default;
// JSON files and --key.path overrides may only touch known keys.
struct RunConfig {
  std::uint64_t seed = 42;
  std::size_t jobs = 1;
  std::string out = "out";
  PathsConfig paths;
  SynthConfig synth;
  ViTConfig vit_spatial;
  ViTConfig vit_temporal;
  std::size_t mae_decoder_dim = 32;
  std::size_t mae_decoder_depth = 2;
  std::size_t mae_decoder_heads = 4;
  double mae_mask_ratio = 0.9;
  bool mae_norm_per_patch = false;
  bool mae_loss_all_patches = false;
  PretrainRun pretrain;
  TrainRun train;
  FlowParams flow;
  double fusion_alpha = 0.5;
  std::string fusion_mode = "score";
  SplitRun split;

  MAEConfig mae_config(const ViTConfig& encoder) const;
  PretrainConfig pretrain_config() const;
  TrainConfig train_config(std::uint64_t run_seed) const;
  FusionConfig fusion_config() const;
  SplitSpec split_spec(std::uint64_t run_seed) const;

  std::string data_dir() const;
  std::string flow_dir() const;
  std::string checkpoint_dir() const;
  std::string report_dir() const;
};

// Effective config from an optional JSON file plus dotted-key overrides
// (applied after the file). Unknown keys, type mismatches, and range
// violations all throw naming the dotted key. Empty path = pure defaults.
RunConfig parse_config(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& overrides);

// Canonical serialization (sorted keys, stable float formatting).
std::string canonical_config_json(const RunConfig& cfg);

// FNV-1a 64 over the canonical serialization, as hex.
std::string config_fingerprint(const RunConfig& cfg);

// Fingerprint of one branch's encoder geometry. Checkpoints carry this so a
// load against different geometry is refused without tying the file to
// unrelated run settings.
std::string vit_fingerprint(const ViTConfig& cfg);

void validate_config(const RunConfig& cfg);

}  // namespace masdt
