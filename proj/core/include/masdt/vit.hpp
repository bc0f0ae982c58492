#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "masdt/optim.hpp"
#include "masdt/rng.hpp"
#include "masdt/tensor.hpp"

namespace masdt {

using Grid = std::pair<std::size_t, std::size_t>;

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t in_channels = 3;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  double drop_path_rate = 0.1;
  bool mean_pool = false;

  void validate() const;
  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }
  std::size_t mlp_hidden() const;
};

struct TokenSequence {
  Tensor tokens;  // [num_tokens x dim]
  Grid grid{0, 0};
  bool has_cls = false;

  std::size_t num_tokens() const { return tokens.dim(0); }
  std::size_t dim() const { return tokens.dim(1); }
  void validate() const;
};

// [C x H x W] -> [N x (P*P*C)], patches in row-major grid order, each row the
// patch flattened as (channel, py, px).
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& patches, Grid grid, std::size_t patch, std::size_t channels);

// Fixed 2-D sine-cosine embedding, [rows*cols x dim], dim divisible by 4.
// First half encodes the row coordinate, second half the column.
Tensor pos_embed_2d(std::size_t rows, std::size_t cols, std::size_t dim);

// Bilinear align-corners resampling over the grid axes. Returns a leaf.
Tensor interpolate_pos_embed(const Tensor& embed, Grid old_grid, Grid new_grid);

// One pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;

  static BlockParams init(std::size_t dim, std::size_t hidden, Rng& rng);
  Tensor forward(const Tensor& x, std::size_t num_heads, double drop_path_rate, Mode mode,
                 Rng& rng) const;
  void append_params(std::vector<Parameter>& out, const std::string& prefix, std::size_t depth) const;
};

Tensor multi_head_attention(const Tensor& x, const BlockParams& p, std::size_t num_heads);

class VitEncoder {
 public:
  VitEncoder(ViTConfig config, Rng& rng);

  const ViTConfig& config() const { return config_; }

  // Linear projection of flattened patches into token space.
  Tensor embed_patches(const Tensor& patches) const;
  const Tensor& cls_token() const { return cls_; }

  // Runs the block stack plus the final layer norm. Positional embeddings are
  // the caller's job so masked and full sequences share this path.
  TokenSequence encode(const TokenSequence& in, Mode mode, Rng& rng) const;

  // Same, but also hands back the last block's output (pre final norm), the
  // activation grid saliency mapping reads.
  struct EncodeTrace {
    TokenSequence output;
    Tensor last_block;
  };
  EncodeTrace encode_traced(const TokenSequence& in, Mode mode, Rng& rng) const;

  // Depth labels for layer-wise lr decay: embeddings 0, block i at i+1, final
  // norm at depth+1.
  std::vector<Parameter> named_params(const std::string& prefix) const;
  std::size_t max_depth() const { return config_.depth + 1; }

 private:
  ViTConfig config_;
  Tensor w_embed_, b_embed_;
  Tensor cls_;
  std::vector<BlockParams> blocks_;
  Tensor lnf_g_, lnf_b_;
};

// Two-layer MLP head producing one logit.
struct ClassifierHead {
  Tensor w1, b1, w2, b2;

  ClassifierHead() = default;
  ClassifierHead(std::size_t in_dim, Rng& rng);
  Tensor logit(const Tensor& readout) const;  // [1 x in_dim] -> [1]
  std::vector<Parameter> named_params(const std::string& prefix, std::size_t depth) const;
};

// CLS row, or mean over patch tokens when mean_pool is set.
Tensor readout(const TokenSequence& latent, bool mean_pool);

Tensor classify(const TokenSequence& latent, const ClassifierHead& head, bool mean_pool);

}  // namespace masdt
