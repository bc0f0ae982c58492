#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "masdt/checkpoint.hpp"
#include "masdt/vit.hpp"

namespace masdt {

// Seeded random split of {0..total-1} into visible and masked, both sorted.
// |visible| = max(1, floor((1 - ratio) * total)).
struct PatchMask {
  std::size_t total = 0;
  double ratio = 0.0;
  std::vector<std::size_t> visible_idx;
  std::vector<std::size_t> masked_idx;
  std::uint64_t seed = 0;
};

PatchMask random_mask(std::size_t total, double ratio, std::uint64_t seed);

struct MAEConfig {
  ViTConfig encoder;
  std::size_t decoder_dim = 32;
  std::size_t decoder_depth = 2;
  std::size_t decoder_heads = 4;
  double mask_ratio = 0.9;
  bool norm_per_patch = false;
  bool loss_all_patches = false;

  void validate() const;
};

struct MaeOutput {
  Tensor reconstruction;  // [N x patch_dim], predictions for every position
  Tensor loss;            // scalar MSE over the masked patches (targets detached)
};

class MaeModel {
 public:
  MaeModel(MAEConfig config, std::uint64_t seed);

  MaeOutput forward(const Tensor& image, const PatchMask& mask, Mode mode, Rng& rng) const;

  const MAEConfig& config() const { return config_; }
  VitEncoder& encoder() { return encoder_; }
  const VitEncoder& encoder() const { return encoder_; }

  // encoder.* then decoder.*; decoder params share the deepest lr group.
  std::vector<Parameter> named_params();
  void load_tensors(const Checkpoint& ckpt);

 private:
  MAEConfig config_;
  VitEncoder encoder_;
  Tensor dec_in_w_, dec_in_b_;
  Tensor mask_token_;
  std::vector<BlockParams> dec_blocks_;
  Tensor dec_lnf_g_, dec_lnf_b_;
  Tensor dec_out_w_, dec_out_b_;
};

struct PretrainConfig {
  std::size_t epochs = 0;
  std::size_t batch_size = 64;
  AdamWConfig opt;  // layer_decay 1.0: the decay schedule is a fine-tuning device
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;
};

// Self-supervised reconstruction training. Deterministic per seed; epochs = 0
// returns the freshly initialized model.
PretrainResult pretrain(const std::vector<Tensor>& images, const MAEConfig& config,
                        const PretrainConfig& train, std::uint64_t seed,
                        const std::string& config_fingerprint);

}  // namespace masdt
