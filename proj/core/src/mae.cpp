#include "masdt/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace masdt {

PatchMask random_mask(std::size_t total, double ratio, std::uint64_t seed) {
  if (total == 0) throw std::invalid_argument("random_mask: total must be positive");
  if (ratio < 0.0 || ratio >= 1.0) throw std::invalid_argument("random_mask: ratio must be in [0, 1)");
  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(perm);
  const std::size_t visible =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor((1.0 - ratio) * static_cast<double>(total))));
  PatchMask mask;
  mask.total = total;
  mask.ratio = ratio;
  mask.seed = seed;
  mask.visible_idx.assign(perm.begin(), perm.begin() + visible);
  mask.masked_idx.assign(perm.begin() + visible, perm.end());
  std::sort(mask.visible_idx.begin(), mask.visible_idx.end());
  std::sort(mask.masked_idx.begin(), mask.masked_idx.end());
  return mask;
}

void MAEConfig::validate() const {
  encoder.validate();
  if (decoder_dim == 0 || decoder_depth == 0 || decoder_heads == 0) {
    throw std::invalid_argument("mae: decoder geometry must be positive");
  }
  if (decoder_dim % decoder_heads != 0) throw std::invalid_argument("mae: decoder_dim not divisible by decoder_heads");
  if (decoder_dim % 4 != 0) throw std::invalid_argument("mae: decoder_dim must be divisible by 4");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) throw std::invalid_argument("mae: mask_ratio must be in [0, 1)");
}

namespace {

Tensor trunc_normal_leaf(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.trunc_normal(stddev);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

VitEncoder build_encoder(const ViTConfig& config, std::uint64_t seed) {
  Rng rng(mix64(seed, 0x656e63ULL));
  return VitEncoder(config, rng);
}

}  // namespace

MaeModel::MaeModel(MAEConfig config, std::uint64_t seed)
    : config_(std::move(config)), encoder_(build_encoder(config_.encoder, seed)) {
  config_.validate();
  Rng rng(mix64(seed, 0x6d61655fULL));
  const std::size_t ed = config_.encoder.embed_dim;
  const std::size_t dd = config_.decoder_dim;
  dec_in_w_ = trunc_normal_leaf({ed, dd}, 0.02, rng);
  dec_in_b_ = Tensor::zeros({1, dd}, true);
  mask_token_ = trunc_normal_leaf({1, dd}, 0.02, rng);
  const std::size_t hidden = dd * 4;
  dec_blocks_.reserve(config_.decoder_depth);
  for (std::size_t i = 0; i < config_.decoder_depth; ++i) {
    dec_blocks_.push_back(BlockParams::init(dd, hidden, rng));
  }
  dec_lnf_g_ = Tensor::full({dd}, 1.0, true);
  dec_lnf_b_ = Tensor::zeros({dd}, true);
  dec_out_w_ = trunc_normal_leaf({dd, config_.encoder.patch_dim()}, 0.02, rng);
  dec_out_b_ = Tensor::zeros({1, config_.encoder.patch_dim()}, true);
}

MaeOutput MaeModel::forward(const Tensor& image, const PatchMask& mask, Mode mode, Rng& rng) const {
  const ViTConfig& vc = config_.encoder;
  Tensor patches = patchify(image, vc.patch_size);
  const std::size_t N = patches.dim(0);
  if (mask.total != N) {
    throw std::invalid_argument("mae_forward: mask covers " + std::to_string(mask.total) + " patches, image has " +
                                std::to_string(N));
  }
  const std::size_t gs = vc.grid_side();

  // targets never enter the graph, so masked pixels carry no gradient
  Tensor target = patches.detach();
  if (config_.norm_per_patch) {
    auto& tv = target.values_mut();
    const std::size_t pd = vc.patch_dim();
    for (std::size_t r = 0; r < N; ++r) {
      double* row = tv.data() + r * pd;
      double mean = 0.0;
      for (std::size_t c = 0; c < pd; ++c) mean += row[c];
      mean /= static_cast<double>(pd);
      double var = 0.0;
      for (std::size_t c = 0; c < pd; ++c) var += (row[c] - mean) * (row[c] - mean);
      var /= static_cast<double>(pd);
      const double istd = 1.0 / std::sqrt(var + 1e-6);
      for (std::size_t c = 0; c < pd; ++c) row[c] = (row[c] - mean) * istd;
    }
  }

  Tensor enc_pos = pos_embed_2d(gs, gs, vc.embed_dim);
  Tensor visible = gather_rows(patches, mask.visible_idx);
  Tensor tokens = add(encoder_.embed_patches(visible), gather_rows(enc_pos, mask.visible_idx));
  tokens = concat_rows(encoder_.cls_token(), tokens);
  TokenSequence seq{tokens, {1, mask.visible_idx.size()}, true};
  TokenSequence latent = encoder_.encode(seq, mode, rng);

  Tensor dec = add(matmul(latent.tokens, dec_in_w_), dec_in_b_);
  Tensor dec_cls = slice_rows(dec, 0, 1);
  Tensor dec_visible = slice_rows(dec, 1, mask.visible_idx.size());
  Tensor full = assemble_rows(dec_visible, mask.visible_idx, mask_token_, N);
  full = add(full, pos_embed_2d(gs, gs, config_.decoder_dim));
  Tensor x = concat_rows(dec_cls, full);
  for (const auto& block : dec_blocks_) {
    x = block.forward(x, config_.decoder_heads, 0.0, mode, rng);
  }
  x = layer_norm(x, dec_lnf_g_, dec_lnf_b_);
  Tensor pred = add(matmul(slice_rows(x, 1, N), dec_out_w_), dec_out_b_);

  Tensor loss;
  if (config_.loss_all_patches) {
    Tensor diff = sub(pred, target);
    loss = mean_all(mul(diff, diff));
  } else if (mask.masked_idx.empty()) {
    loss = Tensor::scalar(0.0);
  } else {
    Tensor diff = sub(gather_rows(pred, mask.masked_idx), gather_rows(target, mask.masked_idx));
    loss = mean_all(mul(diff, diff));
  }
  return MaeOutput{pred, loss};
}

std::vector<Parameter> MaeModel::named_params() {
  std::vector<Parameter> out = encoder_.named_params("encoder.");
  const std::size_t d = encoder_.max_depth();
  out.push_back({"decoder.in.w", dec_in_w_, d});
  out.push_back({"decoder.in.b", dec_in_b_, d});
  out.push_back({"decoder.mask_token", mask_token_, d});
  for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
    dec_blocks_[i].append_params(out, "decoder.block" + std::to_string(i) + ".", d);
  }
  out.push_back({"decoder.final.g", dec_lnf_g_, d});
  out.push_back({"decoder.final.b", dec_lnf_b_, d});
  out.push_back({"decoder.out.w", dec_out_w_, d});
  out.push_back({"decoder.out.b", dec_out_b_, d});
  return out;
}

void MaeModel::load_tensors(const Checkpoint& ckpt) {
  std::vector<Parameter> params = named_params();
  const auto loaded = load_matching(ckpt, params);
  if (loaded.size() != params.size()) {
    throw std::runtime_error("mae checkpoint is missing " + std::to_string(params.size() - loaded.size()) +
                             " tensors");
  }
}

PretrainResult pretrain(const std::vector<Tensor>& images, const MAEConfig& config,
                        const PretrainConfig& train, std::uint64_t seed,
                        const std::string& config_fingerprint) {
  if (images.empty()) throw std::invalid_argument("pretrain: empty dataset");
  config.validate();
  if (train.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be positive");

  // epochs=0 must hand back exactly MaeModel(config, seed)'s initialization
  MaeModel model(config, seed);
  std::vector<Parameter> params = model.named_params();
  std::vector<Tensor> param_tensors;
  param_tensors.reserve(params.size());
  for (const auto& p : params) param_tensors.push_back(p.tensor);

  AdamWConfig opt_cfg = train.opt;
  opt_cfg.max_depth = model.encoder().max_depth();
  AdamW opt(params, opt_cfg);

  const std::size_t N = config.encoder.num_patches();
  Rng model_rng(mix64(seed, 2));
  std::uint64_t mask_counter = 0;
  std::vector<double> epoch_losses;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    Rng shuffle_rng(mix64(seed, 1000 + epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
      const std::size_t count = std::min(train.batch_size, order.size() - start);
      Gradients grads;
      for (std::size_t k = 0; k < count; ++k) {
        const Tensor& image = images[order[start + k]];
        PatchMask mask = random_mask(N, config.mask_ratio, mix64(seed, 0x4d41534bULL + mask_counter++));
        MaeOutput out = model.forward(image, mask, Mode::kTrain, model_rng);
        loss_sum += out.loss.item();
        backward_into(mul(out.loss, 1.0 / static_cast<double>(count)), grads);
        grads.retain(param_tensors);
      }
      opt.step(grads);
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
  }

  PretrainResult result;
  result.checkpoint = make_checkpoint("mae", config_fingerprint, seed, opt.params(), &opt);
  result.epoch_losses = std::move(epoch_losses);
  return result;
}

}  // namespace masdt
