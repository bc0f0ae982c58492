#include "masdt/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "masdt/utils.hpp"

namespace masdt {

namespace {

VitEncoder build_encoder(const ViTConfig& config, std::uint64_t seed) {
  Rng rng(mix64(seed, 0x656e63));
  return VitEncoder(config, rng);
}

ClassifierHead build_head(std::size_t dim, std::uint64_t seed) {
  Rng rng(mix64(seed, 0x68656164));
  return ClassifierHead(dim, rng);
}

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_label(double label) {
  if (!(label >= 0.0 && label <= 1.0)) {
    throw std::invalid_argument("label " + format_double(label) + " outside [0, 1]");
  }
}

}  // namespace

std::string branch_name(BranchKind kind) {
  return kind == BranchKind::kSpatial ? "spatial" : "temporal";
}

BranchModel::BranchModel(BranchKind kind, const ViTConfig& config, std::uint64_t seed)
    : kind_(kind),
      encoder_(build_encoder(config, seed)),
      head_(build_head(config.embed_dim, seed)) {}

TokenSequence BranchModel::tokens_for(const Tensor& image) const {
  const ViTConfig& vc = encoder_.config();
  if (image.ndim() != 3 || image.dim(0) != vc.in_channels || image.dim(1) != vc.image_size ||
      image.dim(2) != vc.image_size) {
    throw std::invalid_argument(branch_name(kind_) + " branch wants [" +
                                std::to_string(vc.in_channels) + " x " + std::to_string(vc.image_size) +
                                " x " + std::to_string(vc.image_size) + "] input, got " +
                                shape_str(image.shape()));
  }
  const std::size_t gs = vc.grid_side();
  Tensor tokens = add(encoder_.embed_patches(patchify(image, vc.patch_size)),
                      pos_embed_2d(gs, gs, vc.embed_dim));
  tokens = concat_rows(encoder_.cls_token(), tokens);
  return TokenSequence{tokens, {gs, gs}, true};
}

Tensor BranchModel::logit_for(const Tensor& image, Mode mode, Rng& rng) const {
  TokenSequence latent = encoder_.encode(tokens_for(image), mode, rng);
  return classify(latent, head_, encoder_.config().mean_pool);
}

Tensor BranchModel::embedding_for(const Tensor& image, Mode mode, Rng& rng) const {
  TokenSequence latent = encoder_.encode(tokens_for(image), mode, rng);
  return readout(latent, encoder_.config().mean_pool);
}

BranchModel::Trace BranchModel::logit_traced(const Tensor& image, Mode mode, Rng& rng) const {
  VitEncoder::EncodeTrace enc = encoder_.encode_traced(tokens_for(image), mode, rng);
  Trace trace;
  trace.last_block = enc.last_block;
  trace.has_cls = enc.output.has_cls;
  trace.logit = head_.logit(readout(enc.output, encoder_.config().mean_pool));
  return trace;
}

double BranchModel::score(const Tensor& image) const {
  Rng rng(0);  // eval mode draws nothing
  return sigmoid_scalar(logit_for(image, Mode::kEval, rng).item());
}

std::vector<Parameter> BranchModel::named_params() const {
  std::vector<Parameter> out = encoder_.named_params("encoder.");
  for (auto& p : head_.named_params("head.", encoder_.max_depth())) out.push_back(std::move(p));
  return out;
}

void BranchModel::load_tensors(const Checkpoint& ckpt) {
  std::vector<Parameter> params = named_params();
  const auto loaded = load_matching(ckpt, params);
  if (loaded.size() != params.size()) {
    for (const auto& p : params) {
      if (std::find(loaded.begin(), loaded.end(), p.name) == loaded.end()) {
        throw std::runtime_error("checkpoint is missing tensor " + p.name);
      }
    }
  }
}

std::size_t BranchModel::load_encoder_tensors(const Checkpoint& ckpt) {
  std::vector<Parameter> params = encoder_.named_params("encoder.");
  const auto loaded = load_matching(ckpt, params);
  if (loaded.size() != params.size()) {
    for (const auto& p : params) {
      if (std::find(loaded.begin(), loaded.end(), p.name) == loaded.end()) {
        throw std::runtime_error("pretraining checkpoint is missing tensor " + p.name);
      }
    }
  }
  return loaded.size();
}

Tensor bce_loss(const Tensor& predicted, const std::vector<double>& targets) {
  if (!predicted.defined() || predicted.ndim() != 1) {
    throw std::invalid_argument("bce_loss: predictions must be a vector");
  }
  const std::size_t m = predicted.dim(0);
  if (m == 0) throw std::invalid_argument("bce_loss: empty batch");
  if (targets.size() != m) {
    throw std::invalid_argument("bce_loss: " + std::to_string(m) + " predictions vs " +
                                std::to_string(targets.size()) + " targets");
  }
  std::vector<double> y(m), yc(m);
  for (std::size_t i = 0; i < m; ++i) {
    check_label(targets[i]);
    y[i] = targets[i];
    yc[i] = 1.0 - targets[i];
  }
  Tensor p = clamp(predicted, 1e-7, 1.0 - 1e-7);
  Tensor pos = mul(Tensor::from_data({m}, std::move(y)), log_op(p));
  Tensor neg = mul(Tensor::from_data({m}, std::move(yc)), log_op(sub(Tensor::full({m}, 1.0), p)));
  return mul(mean_all(add(pos, neg)), -1.0);
}

std::vector<double> smooth_labels(const std::vector<double>& labels, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw std::invalid_argument("smooth_labels: eps outside [0, 1)");
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i]);
    out[i] = labels[i] * (1.0 - eps) + eps / 2.0;
  }
  return out;
}

Sample mixup(const Sample& a, const Sample& b, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("mixup: lambda outside [0, 1]");
  if (a.image.shape() != b.image.shape()) throw std::invalid_argument("mixup: shape mismatch");
  check_label(a.label);
  check_label(b.label);
  const auto& av = a.image.values();
  const auto& bv = b.image.values();
  std::vector<double> v(av.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = lambda * av[i] + (1.0 - lambda) * bv[i];
  return Sample{Tensor::from_data(a.image.shape(), std::move(v)),
                lambda * a.label + (1.0 - lambda) * b.label};
}

CutmixBox sample_cutmix_box(std::size_t height, std::size_t width, double lambda, Rng& rng) {
  if (height == 0 || width == 0) throw std::invalid_argument("cutmix: empty image");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("cutmix: lambda outside [0, 1]");
  const double cut = std::sqrt(1.0 - lambda);
  const long cut_h = std::lround(cut * static_cast<double>(height));
  const long cut_w = std::lround(cut * static_cast<double>(width));
  const long cy = static_cast<long>(rng.uniform_int(height));
  const long cx = static_cast<long>(rng.uniform_int(width));
  const long y0 = std::clamp(cy - cut_h / 2, 0L, static_cast<long>(height));
  const long y1 = std::clamp(cy - cut_h / 2 + cut_h, 0L, static_cast<long>(height));
  const long x0 = std::clamp(cx - cut_w / 2, 0L, static_cast<long>(width));
  const long x1 = std::clamp(cx - cut_w / 2 + cut_w, 0L, static_cast<long>(width));
  CutmixBox box;
  box.y0 = static_cast<std::size_t>(y0);
  box.x0 = static_cast<std::size_t>(x0);
  box.h = static_cast<std::size_t>(y1 - y0);
  box.w = static_cast<std::size_t>(x1 - x0);
  box.lambda_adj = 1.0 - static_cast<double>(box.h * box.w) / static_cast<double>(height * width);
  return box;
}

Sample cutmix_apply(const Sample& a, const Sample& b, const CutmixBox& box) {
  if (a.image.shape() != b.image.shape()) throw std::invalid_argument("cutmix: shape mismatch");
  if (a.image.ndim() != 3) throw std::invalid_argument("cutmix: image must be [C x H x W]");
  check_label(a.label);
  check_label(b.label);
  const std::size_t C = a.image.dim(0), H = a.image.dim(1), W = a.image.dim(2);
  if (box.y0 + box.h > H || box.x0 + box.w > W) throw std::invalid_argument("cutmix: box out of bounds");
  std::vector<double> v = a.image.values();
  const auto& bv = b.image.values();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t r = box.y0; r < box.y0 + box.h; ++r) {
      const std::size_t base = (c * H + r) * W;
      for (std::size_t col = box.x0; col < box.x0 + box.w; ++col) v[base + col] = bv[base + col];
    }
  }
  return Sample{Tensor::from_data(a.image.shape(), std::move(v)),
                box.lambda_adj * a.label + (1.0 - box.lambda_adj) * b.label};
}

Sample cutmix(const Sample& a, const Sample& b, double lambda, Rng& rng) {
  if (a.image.ndim() != 3) throw std::invalid_argument("cutmix: image must be [C x H x W]");
  CutmixBox box = sample_cutmix_box(a.image.dim(1), a.image.dim(2), lambda, rng);
  return cutmix_apply(a, b, box);
}

void FusionConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("fusion: alpha outside [0, 1]");
}

std::string fusion_mode_name(FusionConfig::Mode mode) {
  switch (mode) {
    case FusionConfig::Mode::kScore: return "score";
    case FusionConfig::Mode::kFeature: return "feature";
    case FusionConfig::Mode::kSpatialOnly: return "spatial_only";
  }
  throw std::logic_error("bad fusion mode");
}

FusionConfig::Mode fusion_mode_from_name(const std::string& name) {
  if (name == "score") return FusionConfig::Mode::kScore;
  if (name == "feature") return FusionConfig::Mode::kFeature;
  if (name == "spatial_only") return FusionConfig::Mode::kSpatialOnly;
  throw std::invalid_argument("unknown fusion mode \"" + name + "\" (score, feature, spatial_only)");
}

double fuse_scores(double spatial, double temporal, double alpha) {
  if (!(spatial >= 0.0 && spatial <= 1.0)) {
    throw std::invalid_argument("fuse_scores: spatial score " + format_double(spatial) + " outside [0, 1]");
  }
  if (!(temporal >= 0.0 && temporal <= 1.0)) {
    throw std::invalid_argument("fuse_scores: temporal score " + format_double(temporal) +
                                " outside [0, 1]");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("fuse_scores: alpha outside [0, 1]");
  return alpha * spatial + (1.0 - alpha) * temporal;
}

Tensor fuse_features(const Tensor& spatial_embed, const Tensor& temporal_embed,
                     const ClassifierHead& head) {
  if (spatial_embed.ndim() != 2 || spatial_embed.dim(0) != 1 || temporal_embed.ndim() != 2 ||
      temporal_embed.dim(0) != 1) {
    throw std::invalid_argument("fuse_features: embeddings must be [1 x dim]");
  }
  return head.logit(concat_cols(spatial_embed, temporal_embed));
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("train: label_smoothing outside [0, 1)");
  }
  if (!(cutmix_prob >= 0.0 && cutmix_prob <= 1.0)) {
    throw std::invalid_argument("train: cutmix_prob outside [0, 1]");
  }
  if (!(cutmix_switch_prob >= 0.0 && cutmix_switch_prob <= 1.0)) {
    throw std::invalid_argument("train: cutmix_switch_prob outside [0, 1]");
  }
  if (!(mixup_alpha > 0.0) || !(cutmix_alpha > 0.0)) {
    throw std::invalid_argument("train: mix alphas must be positive");
  }
}

TrainConfig default_finetune_config() {
  TrainConfig cfg;
  cfg.opt.layer_decay = 0.8;
  return cfg;
}

namespace {

// Shared epoch loop for anything trained per sample with BCE.
template <typename ForwardFn>
FinetuneResult run_epochs(AdamW& opt, const std::vector<Tensor>& param_tensors, std::size_t n,
                          const TrainConfig& config, ForwardFn&& forward_batch,
                          const std::string& kind, const std::string& fingerprint) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  FinetuneResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix64(config.seed, 3000 + epoch));
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      Gradients grads;
      loss_sum += forward_batch(order, start, count, grads, param_tensors);
      opt.step(grads);
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
  }
  result.checkpoint = make_checkpoint(kind, fingerprint, config.seed, opt.params(), &opt);
  return result;
}

}  // namespace

FinetuneResult finetune(BranchModel& branch, const std::vector<Sample>& dataset,
                        const TrainConfig& config, const std::string& fingerprint) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("finetune: empty dataset");
  for (const auto& s : dataset) {
    if (!s.image.defined()) throw std::invalid_argument("finetune: undefined image");
    check_label(s.label);
  }

  std::vector<Parameter> params = branch.named_params();
  std::vector<Tensor> param_tensors;
  param_tensors.reserve(params.size());
  for (const auto& p : params) param_tensors.push_back(p.tensor);

  AdamWConfig opt_cfg = config.opt;
  opt_cfg.max_depth = branch.encoder().max_depth();
  AdamW opt(params, opt_cfg);

  Rng aug_rng(mix64(config.seed, 0x617567));
  Rng model_rng(mix64(config.seed, 0x6d646c));

  auto forward_batch = [&](const std::vector<std::size_t>& order, std::size_t start,
                           std::size_t count, Gradients& grads,
                           const std::vector<Tensor>& keep) -> double {
    std::vector<Sample> batch;
    batch.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      const Sample& s = dataset[order[start + k]];
      batch.push_back(Sample{s.image, s.label * (1.0 - config.label_smoothing) +
                                          config.label_smoothing / 2.0});
    }
    if (count >= 2 && config.cutmix_prob > 0.0 && aug_rng.uniform() < config.cutmix_prob) {
      const bool use_cutmix = !config.mixup_enabled || aug_rng.uniform() < config.cutmix_switch_prob;
      const double alpha = use_cutmix ? config.cutmix_alpha : config.mixup_alpha;
      const double lambda = aug_rng.beta(alpha, alpha);
      std::vector<std::size_t> perm(count);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      aug_rng.shuffle(perm);
      std::vector<Sample> mixed;
      mixed.reserve(count);
      if (use_cutmix) {
        // one box per batch, partners drawn from the same batch
        CutmixBox box =
            sample_cutmix_box(batch[0].image.dim(1), batch[0].image.dim(2), lambda, aug_rng);
        for (std::size_t k = 0; k < count; ++k) {
          mixed.push_back(cutmix_apply(batch[k], batch[perm[k]], box));
        }
      } else {
        for (std::size_t k = 0; k < count; ++k) mixed.push_back(mixup(batch[k], batch[perm[k]], lambda));
      }
      batch = std::move(mixed);
    }
    double batch_loss = 0.0;
    for (const Sample& s : batch) {
      Tensor prob = sigmoid(branch.logit_for(s.image, Mode::kTrain, model_rng));
      Tensor loss = bce_loss(prob, {s.label});
      batch_loss += loss.item();
      backward_into(mul(loss, 1.0 / static_cast<double>(count)), grads);
      grads.retain(keep);
    }
    return batch_loss;
  };

  return run_epochs(opt, param_tensors, dataset.size(), config, forward_batch,
                    "branch_" + branch_name(branch.kind()), fingerprint);
}

FinetuneResult train_fusion_head(ClassifierHead& head, const std::vector<EmbeddingPair>& dataset,
                                 const TrainConfig& config, const std::string& fingerprint) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("fusion head: empty dataset");
  for (const auto& pair : dataset) check_label(pair.label);

  std::vector<Parameter> params = head.named_params("fusion_head.", 0);
  std::vector<Tensor> param_tensors;
  param_tensors.reserve(params.size());
  for (const auto& p : params) param_tensors.push_back(p.tensor);

  AdamWConfig opt_cfg = config.opt;
  opt_cfg.layer_decay = 1.0;
  opt_cfg.max_depth = 0;
  AdamW opt(params, opt_cfg);

  auto forward_batch = [&](const std::vector<std::size_t>& order, std::size_t start,
                           std::size_t count, Gradients& grads,
                           const std::vector<Tensor>& keep) -> double {
    double batch_loss = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const EmbeddingPair& pair = dataset[order[start + k]];
      const double target = pair.label * (1.0 - config.label_smoothing) + config.label_smoothing / 2.0;
      Tensor prob = sigmoid(fuse_features(pair.spatial, pair.temporal, head));
      Tensor loss = bce_loss(prob, {target});
      batch_loss += loss.item();
      backward_into(mul(loss, 1.0 / static_cast<double>(count)), grads);
      grads.retain(keep);
    }
    return batch_loss;
  };

  return run_epochs(opt, param_tensors, dataset.size(), config, forward_batch, "fusion_head",
                    fingerprint);
}

VideoPrediction predict_video(const std::vector<Tensor>& frames,
                              const std::vector<Tensor>& flow_images,
                              const BranchModel* spatial, const BranchModel* temporal,
                              const ClassifierHead* fusion_head, const FusionConfig& fusion) {
  fusion.validate();
  if (frames.empty()) throw std::invalid_argument("predict_video: no frames");
  if (spatial == nullptr) throw std::invalid_argument("predict_video: spatial branch required");

  VideoPrediction pred;
  pred.spatial_scores.reserve(frames.size());
  for (const Tensor& frame : frames) pred.spatial_scores.push_back(spatial->score(frame));

  if (fusion.mode == FusionConfig::Mode::kSpatialOnly) {
    pred.fused_scores = pred.spatial_scores;
  } else {
    if (frames.size() < 2) {
      throw std::invalid_argument("predict_video: " + fusion_mode_name(fusion.mode) +
                                  " mode needs at least two frames");
    }
    if (temporal == nullptr) throw std::invalid_argument("predict_video: temporal branch required");
    if (flow_images.size() != frames.size() - 1) {
      throw std::invalid_argument("predict_video: expected " + std::to_string(frames.size() - 1) +
                                  " flow images, got " + std::to_string(flow_images.size()));
    }
    pred.temporal_scores.reserve(flow_images.size());
    for (const Tensor& fi : flow_images) pred.temporal_scores.push_back(temporal->score(fi));
    pred.fused_scores.reserve(flow_images.size());
    if (fusion.mode == FusionConfig::Mode::kScore) {
      for (std::size_t t = 0; t < flow_images.size(); ++t) {
        pred.fused_scores.push_back(
            fuse_scores(pred.spatial_scores[t], pred.temporal_scores[t], fusion.alpha));
      }
    } else {
      if (fusion_head == nullptr) throw std::invalid_argument("predict_video: fusion head required");
      Rng rng(0);
      for (std::size_t t = 0; t < flow_images.size(); ++t) {
        Tensor es = spatial->embedding_for(frames[t], Mode::kEval, rng);
        Tensor et = temporal->embedding_for(flow_images[t], Mode::kEval, rng);
        pred.fused_scores.push_back(sigmoid_scalar(fuse_features(es, et, *fusion_head).item()));
      }
    }
  }

  double sum = 0.0;
  for (double s : pred.fused_scores) sum += s;
  pred.score = sum / static_cast<double>(pred.fused_scores.size());
  return pred;
}

}  // namespace masdt
