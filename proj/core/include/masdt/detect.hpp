#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masdt/checkpoint.hpp"
#include "masdt/optim.hpp"
#include "masdt/rng.hpp"
#include "masdt/tensor.hpp"
#include "masdt/vit.hpp"

namespace masdt {

enum class BranchKind { kSpatial, kTemporal };

std::string branch_name(BranchKind kind);

// One detection branch: a ViT encoder plus a small classification head.
// The spatial branch scores single RGB frames, the temporal branch scores
// flow-field renderings; both share this class, only the inputs differ.
class BranchModel {
 public:
  BranchModel(BranchKind kind, const ViTConfig& config, std::uint64_t seed);

  BranchKind kind() const { return kind_; }
  const ViTConfig& config() const { return encoder_.config(); }
  const VitEncoder& encoder() const { return encoder_; }
  const ClassifierHead& head() const { return head_; }

  // Full differentiable path: patchify, embed, add positions, prepend CLS,
  // encode, read out, head. Returns the raw logit, shape [1].
  Tensor logit_for(const Tensor& image, Mode mode, Rng& rng) const;

  // Same path up to the readout, shape [1 x embed_dim].
  Tensor embedding_for(const Tensor& image, Mode mode, Rng& rng) const;

  // Traced variant used by saliency mapping.
  struct Trace {
    Tensor logit;
    Tensor last_block;   // [T x dim] before the final norm
    bool has_cls = false;
  };
  Trace logit_traced(const Tensor& image, Mode mode, Rng& rng) const;

  // Eval-mode fake probability in (0, 1).
  double score(const Tensor& image) const;

  // Tokens the encoder consumes for `image` (embedded patches + pos + CLS).
  TokenSequence tokens_for(const Tensor& image) const;

  // "encoder." params at their stack depths, "head." params one past them.
  std::vector<Parameter> named_params() const;

  void load_tensors(const Checkpoint& ckpt);

  // Pulls only the "encoder.*" tensors out of a pretraining checkpoint,
  // leaving the head at its fresh init. Throws if any encoder tensor is
  // missing or shaped differently. Returns how many tensors were copied.
  std::size_t load_encoder_tensors(const Checkpoint& ckpt);

 private:
  BranchKind kind_;
  VitEncoder encoder_;
  ClassifierHead head_;
};

// Mean binary cross-entropy. `predicted` holds probabilities, shape [M];
// each is clamped to [1e-7, 1 - 1e-7] before the logs. Targets may be soft.
Tensor bce_loss(const Tensor& predicted, const std::vector<double>& targets);

// 1 -> 1 - eps/2, 0 -> eps/2; soft labels move proportionally.
std::vector<double> smooth_labels(const std::vector<double>& labels, double eps);

struct Sample {
  Tensor image;
  double label = 0.0;
};

// Convex blend of two samples, pixels and labels alike.
Sample mixup(const Sample& a, const Sample& b, double lambda);

struct CutmixBox {
  std::size_t y0 = 0;
  std::size_t x0 = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  // 1 - (pasted area / image area), after clipping at the borders.
  double lambda_adj = 1.0;
};

// Box with side ratio sqrt(1 - lambda), uniform center, clipped to bounds.
CutmixBox sample_cutmix_box(std::size_t height, std::size_t width, double lambda, Rng& rng);

// Pastes b's pixels into a over the box; label mixes by the realized area.
Sample cutmix_apply(const Sample& a, const Sample& b, const CutmixBox& box);

Sample cutmix(const Sample& a, const Sample& b, double lambda, Rng& rng);

struct FusionConfig {
  enum class Mode { kScore, kFeature, kSpatialOnly };
  double alpha = 0.5;  // weight on the spatial score
  Mode mode = Mode::kScore;
  void validate() const;
};

std::string fusion_mode_name(FusionConfig::Mode mode);
FusionConfig::Mode fusion_mode_from_name(const std::string& name);

// alpha * spatial + (1 - alpha) * temporal, inputs checked against [0, 1].
double fuse_scores(double spatial, double temporal, double alpha);

// Concatenated embeddings through a joint head; returns the logit, shape [1].
Tensor fuse_features(const Tensor& spatial_embed, const Tensor& temporal_embed,
                     const ClassifierHead& head);

struct TrainConfig {
  std::size_t epochs = 6;
  std::size_t batch_size = 64;
  double label_smoothing = 0.1;
  bool mixup_enabled = true;
  double mixup_alpha = 1.0;
  double cutmix_prob = 1.0;        // chance a batch gets mixed at all
  double cutmix_switch_prob = 0.5; // chance the mix is CutMix rather than MixUp
  double cutmix_alpha = 1.0;
  AdamWConfig opt;                 // layer_decay 0.8 is set by default here
  std::uint64_t seed = 0;
  void validate() const;
};

TrainConfig default_finetune_config();

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;
};

// Supervised training of one branch on labeled samples. Mixing is decided
// per batch: with probability cutmix_prob the batch is mixed against a
// shuffled copy of itself, CutMix vs MixUp chosen by cutmix_switch_prob,
// lambda ~ Beta(alpha, alpha). Labels are smoothed before mixing.
FinetuneResult finetune(BranchModel& branch, const std::vector<Sample>& dataset,
                        const TrainConfig& config, const std::string& fingerprint);

struct EmbeddingPair {
  Tensor spatial;
  Tensor temporal;
  double label = 0.0;
};

// Trains a joint head on frozen-branch embedding pairs (no mixing; the
// inputs are latents, not pixels). Smoothing and optimizer settings come
// from `config`.
FinetuneResult train_fusion_head(ClassifierHead& head, const std::vector<EmbeddingPair>& dataset,
                                 const TrainConfig& config, const std::string& fingerprint);

struct VideoPrediction {
  double score = 0.0;                  // mean fused score, the video verdict
  std::vector<double> spatial_scores;  // one per frame
  std::vector<double> temporal_scores; // one per consecutive pair
  std::vector<double> fused_scores;    // per pair; per frame in spatial-only
};

// Scores a clip. Pair t combines frame t's spatial score with the flow
// rendering for (t, t+1). Spatial-only ignores flow entirely and accepts
// single-frame clips; the other modes need at least two frames and exactly
// frames.size() - 1 flow images.
VideoPrediction predict_video(const std::vector<Tensor>& frames,
                              const std::vector<Tensor>& flow_images,
                              const BranchModel* spatial, const BranchModel* temporal,
                              const ClassifierHead* fusion_head, const FusionConfig& fusion);

}  // namespace masdt
