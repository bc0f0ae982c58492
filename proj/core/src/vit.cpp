#include "masdt/vit.hpp"

#include <cmath>
#include <stdexcept>

namespace masdt {

void ViTConfig::validate() const {
  if (image_size == 0 || patch_size == 0) throw std::invalid_argument("vit: image_size and patch_size must be positive");
  if (image_size % patch_size != 0) throw std::invalid_argument("vit: image_size not divisible by patch_size");
  if (embed_dim == 0 || depth == 0 || num_heads == 0) throw std::invalid_argument("vit: embed_dim, depth, num_heads must be positive");
  if (embed_dim % num_heads != 0) throw std::invalid_argument("vit: embed_dim not divisible by num_heads");
  if (embed_dim % 4 != 0) throw std::invalid_argument("vit: embed_dim must be divisible by 4 for the positional embedding");
  if (in_channels == 0) throw std::invalid_argument("vit: in_channels must be positive");
  if (mlp_ratio <= 0) throw std::invalid_argument("vit: mlp_ratio must be positive");
  if (drop_path_rate < 0 || drop_path_rate >= 1) throw std::invalid_argument("vit: drop_path_rate must be in [0, 1)");
}

std::size_t ViTConfig::mlp_hidden() const {
  auto h = static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim));
  return h == 0 ? 1 : h;
}

void TokenSequence::validate() const {
  const std::size_t expect = grid.first * grid.second + (has_cls ? 1 : 0);
  if (tokens.ndim() != 2 || tokens.dim(0) != expect) {
    throw std::invalid_argument("token sequence: expected " + std::to_string(expect) + " rows, got " +
                                shape_str(tokens.shape()));
  }
}

// ---- patch <-> image ------------------------------------------------------

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.ndim() != 3) throw std::invalid_argument("patchify: expected [C x H x W], got " + shape_str(image.shape()));
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw std::invalid_argument("patchify: image " + shape_str(image.shape()) + " not divisible by patch " +
                                std::to_string(patch));
  }
  const std::size_t gr = H / patch, gc = W / patch;
  const std::size_t pd = patch * patch * C;
  std::vector<std::size_t> map(gr * gc * pd);
  std::size_t o = 0;
  for (std::size_t gy = 0; gy < gr; ++gy)
    for (std::size_t gx = 0; gx < gc; ++gx)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px)
            map[o++] = c * H * W + (gy * patch + py) * W + (gx * patch + px);
  return gather_elements(image, map, {gr * gc, pd});
}

Tensor unpatchify(const Tensor& patches, Grid grid, std::size_t patch, std::size_t channels) {
  if (patches.ndim() != 2) throw std::invalid_argument("unpatchify: expected 2-D patches");
  const std::size_t gr = grid.first, gc = grid.second;
  const std::size_t pd = patch * patch * channels;
  if (patches.dim(0) != gr * gc || patches.dim(1) != pd) {
    throw std::invalid_argument("unpatchify: patches " + shape_str(patches.shape()) + " do not match grid " +
                                std::to_string(gr) + "x" + std::to_string(gc) + " patch " + std::to_string(patch));
  }
  const std::size_t H = gr * patch, W = gc * patch;
  std::vector<std::size_t> map(channels * H * W);
  std::size_t o = 0;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t n = (y / patch) * gc + (x / patch);
        const std::size_t j = c * patch * patch + (y % patch) * patch + (x % patch);
        map[o++] = n * pd + j;
      }
  return gather_elements(patches, map, {channels, H, W});
}

// ---- positional embeddings --------------------------------------------------

Tensor pos_embed_2d(std::size_t rows, std::size_t cols, std::size_t dim) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("pos_embed_2d: grid must be positive");
  if (dim == 0 || dim % 4 != 0) throw std::invalid_argument("pos_embed_2d: dim must be a positive multiple of 4");
  const std::size_t quarter = dim / 4;
  std::vector<double> omega(quarter);
  for (std::size_t k = 0; k < quarter; ++k) {
    omega[k] = 1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(quarter));
  }
  std::vector<double> out(rows * cols * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double* row = out.data() + (r * cols + c) * dim;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double ar = static_cast<double>(r) * omega[k];
        const double ac = static_cast<double>(c) * omega[k];
        row[k] = std::sin(ar);
        row[quarter + k] = std::cos(ar);
        row[2 * quarter + k] = std::sin(ac);
        row[3 * quarter + k] = std::cos(ac);
      }
    }
  }
  return Tensor::from_data({rows * cols, dim}, std::move(out));
}

Tensor interpolate_pos_embed(const Tensor& embed, Grid old_grid, Grid new_grid) {
  if (old_grid.first == 0 || old_grid.second == 0 || new_grid.first == 0 || new_grid.second == 0) {
    throw std::invalid_argument("interpolate_pos_embed: grids must be positive");
  }
  if (embed.ndim() != 2 || embed.dim(0) != old_grid.first * old_grid.second) {
    throw std::invalid_argument("interpolate_pos_embed: embed rows do not match old grid");
  }
  const std::size_t dim = embed.dim(1);
  const auto& src = embed.values();
  if (old_grid == new_grid) return Tensor::from_data(embed.shape(), src);

  const std::size_t orows = old_grid.first, ocols = old_grid.second;
  const std::size_t nrows = new_grid.first, ncols = new_grid.second;
  std::vector<double> out(nrows * ncols * dim);
  for (std::size_t r = 0; r < nrows; ++r) {
    const double sy = nrows == 1 ? 0.0
                                 : static_cast<double>(r) * static_cast<double>(orows - 1) /
                                       static_cast<double>(nrows - 1);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, orows - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t c = 0; c < ncols; ++c) {
      const double sx = ncols == 1 ? 0.0
                                   : static_cast<double>(c) * static_cast<double>(ocols - 1) /
                                         static_cast<double>(ncols - 1);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, ocols - 1);
      const double fx = sx - static_cast<double>(x0);
      const double* p00 = src.data() + (y0 * ocols + x0) * dim;
      const double* p01 = src.data() + (y0 * ocols + x1) * dim;
      const double* p10 = src.data() + (y1 * ocols + x0) * dim;
      const double* p11 = src.data() + (y1 * ocols + x1) * dim;
      double* dst = out.data() + (r * ncols + c) * dim;
      for (std::size_t k = 0; k < dim; ++k) {
        const double top = p00[k] + fx * (p01[k] - p00[k]);
        const double bot = p10[k] + fx * (p11[k] - p10[k]);
        dst[k] = top + fy * (bot - top);
      }
    }
  }
  return Tensor::from_data({nrows * ncols, dim}, std::move(out));
}

// ---- transformer block --------------------------------------------------------

namespace {

Tensor trunc_normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.trunc_normal(stddev);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

}  // namespace

BlockParams BlockParams::init(std::size_t dim, std::size_t hidden, Rng& rng) {
  BlockParams p;
  p.ln1_g = Tensor::full({dim}, 1.0, true);
  p.ln1_b = Tensor::zeros({dim}, true);
  p.wq = trunc_normal_tensor({dim, dim}, 0.02, rng);
  p.bq = Tensor::zeros({1, dim}, true);
  p.wk = trunc_normal_tensor({dim, dim}, 0.02, rng);
  p.bk = Tensor::zeros({1, dim}, true);
  p.wv = trunc_normal_tensor({dim, dim}, 0.02, rng);
  p.bv = Tensor::zeros({1, dim}, true);
  p.wo = trunc_normal_tensor({dim, dim}, 0.02, rng);
  p.bo = Tensor::zeros({1, dim}, true);
  p.ln2_g = Tensor::full({dim}, 1.0, true);
  p.ln2_b = Tensor::zeros({dim}, true);
  p.fc1_w = trunc_normal_tensor({dim, hidden}, 0.02, rng);
  p.fc1_b = Tensor::zeros({1, hidden}, true);
  p.fc2_w = trunc_normal_tensor({hidden, dim}, 0.02, rng);
  p.fc2_b = Tensor::zeros({1, dim}, true);
  return p;
}

Tensor multi_head_attention(const Tensor& x, const BlockParams& p, std::size_t num_heads) {
  const std::size_t dim = x.dim(1);
  if (dim % num_heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
  const std::size_t hd = dim / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor q = add(matmul(x, p.wq), p.bq);
  Tensor k = add(matmul(x, p.wk), p.bk);
  Tensor v = add(matmul(x, p.wv), p.bv);
  Tensor merged;
  for (std::size_t h = 0; h < num_heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, hd);
    Tensor kh = slice_cols(k, h * hd, hd);
    Tensor vh = slice_cols(v, h * hd, hd);
    Tensor scores = mul(matmul(qh, transpose(kh)), scale);
    Tensor attn = softmax(scores, 1);
    Tensor oh = matmul(attn, vh);
    merged = h == 0 ? oh : concat_cols(merged, oh);
  }
  return add(matmul(merged, p.wo), p.bo);
}

Tensor BlockParams::forward(const Tensor& x, std::size_t num_heads, double drop_path_rate, Mode mode,
                            Rng& rng) const {
  Tensor a = multi_head_attention(layer_norm(x, ln1_g, ln1_b), *this, num_heads);
  Tensor h = add(x, drop_path(a, drop_path_rate, mode, rng));
  Tensor m = add(matmul(gelu(add(matmul(layer_norm(h, ln2_g, ln2_b), fc1_w), fc1_b)), fc2_w), fc2_b);
  return add(h, drop_path(m, drop_path_rate, mode, rng));
}

void BlockParams::append_params(std::vector<Parameter>& out, const std::string& prefix,
                                std::size_t depth) const {
  auto put = [&](const char* name, const Tensor& t) { out.push_back({prefix + name, t, depth}); };
  put("ln1.g", ln1_g);
  put("ln1.b", ln1_b);
  put("attn.wq", wq);
  put("attn.bq", bq);
  put("attn.wk", wk);
  put("attn.bk", bk);
  put("attn.wv", wv);
  put("attn.bv", bv);
  put("attn.wo", wo);
  put("attn.bo", bo);
  put("ln2.g", ln2_g);
  put("ln2.b", ln2_b);
  put("mlp.fc1.w", fc1_w);
  put("mlp.fc1.b", fc1_b);
  put("mlp.fc2.w", fc2_w);
  put("mlp.fc2.b", fc2_b);
}

// ---- encoder ----------------------------------------------------------------

VitEncoder::VitEncoder(ViTConfig config, Rng& rng) : config_(config) {
  config_.validate();
  w_embed_ = trunc_normal_tensor({config_.patch_dim(), config_.embed_dim}, 0.02, rng);
  b_embed_ = Tensor::zeros({1, config_.embed_dim}, true);
  cls_ = trunc_normal_tensor({1, config_.embed_dim}, 0.02, rng);
  blocks_.reserve(config_.depth);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks_.push_back(BlockParams::init(config_.embed_dim, config_.mlp_hidden(), rng));
  }
  lnf_g_ = Tensor::full({config_.embed_dim}, 1.0, true);
  lnf_b_ = Tensor::zeros({config_.embed_dim}, true);
}

Tensor VitEncoder::embed_patches(const Tensor& patches) const {
  if (patches.ndim() != 2 || patches.dim(1) != config_.patch_dim()) {
    throw std::invalid_argument("embed_patches: expected [N x " + std::to_string(config_.patch_dim()) +
                                "], got " + shape_str(patches.shape()));
  }
  return add(matmul(patches, w_embed_), b_embed_);
}

TokenSequence VitEncoder::encode(const TokenSequence& in, Mode mode, Rng& rng) const {
  return encode_traced(in, mode, rng).output;
}

VitEncoder::EncodeTrace VitEncoder::encode_traced(const TokenSequence& in, Mode mode, Rng& rng) const {
  in.validate();
  if (in.dim() != config_.embed_dim) {
    throw std::invalid_argument("encode: token dim " + std::to_string(in.dim()) + " != embed dim " +
                                std::to_string(config_.embed_dim));
  }
  Tensor x = in.tokens;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    // stochastic depth ramps linearly, first block always kept
    const double rate = config_.depth <= 1
                            ? config_.drop_path_rate
                            : config_.drop_path_rate * static_cast<double>(i) /
                                  static_cast<double>(config_.depth - 1);
    x = blocks_[i].forward(x, config_.num_heads, rate, mode, rng);
  }
  EncodeTrace trace;
  trace.last_block = x;
  x = layer_norm(x, lnf_g_, lnf_b_);
  trace.output = TokenSequence{x, in.grid, in.has_cls};
  return trace;
}

std::vector<Parameter> VitEncoder::named_params(const std::string& prefix) const {
  std::vector<Parameter> out;
  out.push_back({prefix + "embed.w", w_embed_, 0});
  out.push_back({prefix + "embed.b", b_embed_, 0});
  out.push_back({prefix + "cls", cls_, 0});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].append_params(out, prefix + "block" + std::to_string(i) + ".", i + 1);
  }
  out.push_back({prefix + "final.g", lnf_g_, config_.depth + 1});
  out.push_back({prefix + "final.b", lnf_b_, config_.depth + 1});
  return out;
}

// ---- classification -----------------------------------------------------------

ClassifierHead::ClassifierHead(std::size_t in_dim, Rng& rng) {
  w1 = trunc_normal_tensor({in_dim, in_dim}, 0.02, rng);
  b1 = Tensor::zeros({1, in_dim}, true);
  w2 = trunc_normal_tensor({in_dim, 1}, 0.02, rng);
  b2 = Tensor::zeros({1, 1}, true);
}

Tensor ClassifierHead::logit(const Tensor& readout) const {
  Tensor h = gelu(add(matmul(readout, w1), b1));
  return reshape(add(matmul(h, w2), b2), {1});
}

std::vector<Parameter> ClassifierHead::named_params(const std::string& prefix, std::size_t depth) const {
  return {{prefix + "w1", w1, depth}, {prefix + "b1", b1, depth},
          {prefix + "w2", w2, depth}, {prefix + "b2", b2, depth}};
}

Tensor readout(const TokenSequence& latent, bool mean_pool) {
  latent.validate();
  if (mean_pool) {
    const std::size_t first = latent.has_cls ? 1 : 0;
    const std::size_t count = latent.num_tokens() - first;
    Tensor patches = slice_rows(latent.tokens, first, count);
    Tensor ones = Tensor::full({1, count}, 1.0 / static_cast<double>(count));
    return matmul(ones, patches);
  }
  if (!latent.has_cls) throw std::invalid_argument("readout: no CLS token and mean_pool disabled");
  return slice_rows(latent.tokens, 0, 1);
}

Tensor classify(const TokenSequence& latent, const ClassifierHead& head, bool mean_pool) {
  return head.logit(readout(latent, mean_pool));
}

}  // namespace masdt
