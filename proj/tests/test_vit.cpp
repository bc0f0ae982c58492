#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "masdt/rng.hpp"
#include "masdt/tensor.hpp"
#include "masdt/vit.hpp"

using namespace masdt;

namespace {

Tensor random_image(std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  std::vector<double> v(c * h * w);
  for (double& x : v) x = rng.uniform();
  return Tensor::from_data({c, h, w}, std::move(v));
}

ViTConfig toy_config() {
  ViTConfig cfg;  // defaults: 32x32, P4, dim 64, depth 4, heads 4
  return cfg;
}

}  // namespace

TEST_CASE("config invariants") {
  ViTConfig cfg = toy_config();
  CHECK(cfg.image_size == 32);
  CHECK(cfg.patch_size == 4);
  CHECK(cfg.embed_dim == 64);
  CHECK(cfg.depth == 4);
  CHECK(cfg.num_heads == 4);
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.grid_side() == 8);
  CHECK(cfg.num_patches() == 64);
  CHECK(cfg.patch_dim() == 48);

  ViTConfig bad = cfg;
  bad.image_size = 30;  // not divisible by patch size
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  ViTConfig bad2 = cfg;
  bad2.embed_dim = 62;  // not divisible by heads
  CHECK_THROWS_AS(bad2.validate(), std::invalid_argument);

  ViTConfig paper = cfg;
  paper.image_size = 224;
  paper.patch_size = 16;
  CHECK(paper.num_patches() == 196);
}

TEST_CASE("patchify row-major order on a 4x4 single-channel image") {
  std::vector<double> v(16);
  for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<double>(i);
  Tensor img = Tensor::from_data({1, 4, 4}, v);
  Tensor p = patchify(img, 2);
  REQUIRE(p.shape() == Shape{4, 4});
  // patch 0 = rows 0-1, cols 0-1
  CHECK(p.at2(0, 0) == 0.0);
  CHECK(p.at2(0, 1) == 1.0);
  CHECK(p.at2(0, 2) == 4.0);
  CHECK(p.at2(0, 3) == 5.0);
  // patch 1 = rows 0-1, cols 2-3
  CHECK(p.at2(1, 0) == 2.0);
  // patch 2 = rows 2-3, cols 0-1
  CHECK(p.at2(2, 0) == 8.0);
  // patch 3 = rows 2-3, cols 2-3
  CHECK(p.at2(3, 3) == 15.0);
}

TEST_CASE("patchify rejects indivisible dims") {
  Tensor img = Tensor::zeros({3, 6, 6});
  CHECK_THROWS_AS((void)patchify(img, 4), std::invalid_argument);
}

TEST_CASE("unpatchify inverts patchify over random shapes") {
  Rng rng(11);
  const std::size_t cases[][3] = {{1, 4, 4}, {3, 8, 8}, {3, 12, 8}, {2, 16, 24}};
  for (const auto& s : cases) {
    for (std::size_t ps : {2, 4}) {
      if (s[1] % ps || s[2] % ps) continue;
      Tensor img = random_image(s[0], s[1], s[2], rng);
      Tensor round = unpatchify(patchify(img, ps), {s[1] / ps, s[2] / ps}, ps, s[0]);
      REQUIRE(round.shape() == img.shape());
      for (std::size_t i = 0; i < img.numel(); ++i) CHECK(round.at(i) == img.at(i));
    }
  }
}

TEST_CASE("unpatchify single patch grid 1x1 is a reshape") {
  Rng rng(12);
  Tensor img = random_image(3, 4, 4, rng);
  Tensor p = patchify(img, 4);
  REQUIRE(p.shape() == Shape{1, 48});
  Tensor back = unpatchify(p, {1, 1}, 4, 3);
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back.at(i) == img.at(i));
}

TEST_CASE("checkerboard survives the round trip bitwise") {
  std::vector<double> v(3 * 8 * 8);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) v[(c * 8 + y) * 8 + x] = double((x + y) % 2);
  Tensor img = Tensor::from_data({3, 8, 8}, v);
  Tensor round = unpatchify(patchify(img, 2), {4, 4}, 2, 3);
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(round.at(i) == img.at(i));
}

TEST_CASE("positional embedding rows are bounded, deterministic, distinct") {
  Tensor pe = pos_embed_2d(8, 8, 64);
  REQUIRE(pe.shape() == Shape{64, 64});
  for (std::size_t r = 0; r < 64; ++r) {
    double norm2 = 0.0;
    for (std::size_t c = 0; c < 64; ++c) norm2 += pe.at2(r, c) * pe.at2(r, c);
    CHECK(norm2 > 0.0);
    CHECK(norm2 <= 64.0 + 1e-9);
  }

  Tensor pe2 = pos_embed_2d(8, 8, 64);
  for (std::size_t i = 0; i < pe.numel(); ++i) CHECK(pe.at(i) == pe2.at(i));

  double min_pair = 1e300;
  for (std::size_t a = 0; a < 64; ++a) {
    for (std::size_t b = a + 1; b < 64; ++b) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 64; ++c) {
        const double d = pe.at2(a, c) - pe.at2(b, c);
        d2 += d * d;
      }
      min_pair = std::min(min_pair, d2);
    }
  }
  CHECK(min_pair > 0.0);
}

TEST_CASE("pos_embed_2d requires dim divisible by 4") {
  CHECK_THROWS_AS((void)pos_embed_2d(4, 4, 30), std::invalid_argument);
}

TEST_CASE("positional interpolation identity and bilinear center") {
  Tensor pe = pos_embed_2d(2, 2, 8);
  Tensor same = interpolate_pos_embed(pe, {2, 2}, {2, 2});
  for (std::size_t i = 0; i < pe.numel(); ++i) CHECK(same.at(i) == pe.at(i));

  Tensor up = interpolate_pos_embed(pe, {2, 2}, {3, 3});
  REQUIRE(up.shape() == Shape{9, 8});
  for (std::size_t c = 0; c < 8; ++c) {
    const double corner_mean = (pe.at2(0, c) + pe.at2(1, c) + pe.at2(2, c) + pe.at2(3, c)) / 4.0;
    CHECK(up.at2(4, c) == doctest::Approx(corner_mean).epsilon(1e-12));
  }
}

TEST_CASE("positional interpolation round trip stays close on smooth input") {
  Tensor pe = pos_embed_2d(8, 8, 16);
  Tensor up = interpolate_pos_embed(pe, {8, 8}, {14, 14});
  Tensor back = interpolate_pos_embed(up, {14, 14}, {8, 8});
  double linf = 0.0;
  for (std::size_t i = 0; i < pe.numel(); ++i) linf = std::max(linf, std::abs(back.at(i) - pe.at(i)));
  CHECK(linf < 0.15);
}

TEST_CASE("encode preserves shape and is deterministic in eval mode") {
  ViTConfig cfg = toy_config();
  Rng init(21);
  VitEncoder enc(cfg, init);

  Rng data(22);
  Tensor img = random_image(3, 32, 32, data);
  Tensor tokens = add(enc.embed_patches(patchify(img, cfg.patch_size)), pos_embed_2d(8, 8, 64));
  TokenSequence seq{concat_rows(enc.cls_token(), tokens), {8, 8}, true};

  Rng r1(0), r2(0);
  TokenSequence out1 = enc.encode(seq, Mode::kEval, r1);
  TokenSequence out2 = enc.encode(seq, Mode::kEval, r2);
  REQUIRE(out1.tokens.shape() == Shape{65, 64});
  CHECK(out1.has_cls);
  for (std::size_t i = 0; i < out1.tokens.numel(); ++i) {
    CHECK(out1.tokens.at(i) == out2.tokens.at(i));
  }
}

TEST_CASE("zero drop path makes train and eval modes agree") {
  ViTConfig cfg = toy_config();
  cfg.drop_path_rate = 0.0;
  Rng init(23);
  VitEncoder enc(cfg, init);
  Rng data(24);
  Tensor img = random_image(3, 32, 32, data);
  Tensor tokens = add(enc.embed_patches(patchify(img, cfg.patch_size)), pos_embed_2d(8, 8, 64));
  TokenSequence seq{tokens, {8, 8}, false};
  Rng rt(1), re(2);
  TokenSequence train = enc.encode(seq, Mode::kTrain, rt);
  TokenSequence eval = enc.encode(seq, Mode::kEval, re);
  for (std::size_t i = 0; i < train.tokens.numel(); ++i) {
    CHECK(train.tokens.at(i) == eval.tokens.at(i));
  }
}

TEST_CASE("attention is permutation equivariant without positions") {
  ViTConfig cfg = toy_config();
  cfg.depth = 2;
  cfg.drop_path_rate = 0.0;
  Rng init(25);
  VitEncoder enc(cfg, init);

  Rng data(26);
  std::vector<double> v(6 * 64);
  for (double& x : v) x = data.normal();
  Tensor tokens = Tensor::from_data({6, 64}, v);

  const std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor permuted = gather_rows(tokens, perm);

  Rng r1(0), r2(0);
  TokenSequence out = enc.encode({tokens, {2, 3}, false}, Mode::kEval, r1);
  TokenSequence pout = enc.encode({permuted, {2, 3}, false}, Mode::kEval, r2);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 64; ++c) {
      CHECK(std::abs(pout.tokens.at2(i, c) - out.tokens.at2(perm[i], c)) < 1e-9);
    }
  }
}

TEST_CASE("single transformer block passes grad_check") {
  Rng init(27);
  BlockParams block = BlockParams::init(8, 16, init);

  Rng data(28);
  std::vector<double> v(3 * 8);
  for (double& x : v) x = data.normal() * 0.5;
  Tensor x = Tensor::from_data({3, 8}, v, true);

  // the params inside `block` alias the extra inputs, so grad_check's
  // perturbations flow through the shared storage
  std::vector<Tensor> inputs = {x};
  std::vector<Parameter> params;
  block.append_params(params, "b.", 1);
  for (const auto& p : params) inputs.push_back(p.tensor);

  auto f = [&block](const std::vector<Tensor>& in) {
    Rng r(0);
    Tensor out = block.forward(in[0], 2, 0.0, Mode::kEval, r);
    return mean_all(mul(out, out));
  };
  CHECK(grad_check(f, inputs) < 1e-4);
}

TEST_CASE("classifier head at zero weights gives probability one half") {
  Rng rng(29);
  ClassifierHead head(16, rng);
  for (Tensor* w : {&head.w1, &head.b1, &head.w2, &head.b2}) {
    auto& v = w->values_mut();
    std::fill(v.begin(), v.end(), 0.0);
  }
  std::vector<double> latent(16, 0.7);
  Tensor z = head.logit(Tensor::from_data({1, 16}, latent));
  CHECK(z.item() == 0.0);
  CHECK(sigmoid(z).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("classify produces a finite logit and reaches every block") {
  ViTConfig cfg = toy_config();
  Rng init(30);
  VitEncoder enc(cfg, init);
  Rng hr(31);
  ClassifierHead head(cfg.embed_dim, hr);

  Rng data(32);
  Tensor img = random_image(3, 32, 32, data);
  Tensor tokens = add(enc.embed_patches(patchify(img, cfg.patch_size)),
                      pos_embed_2d(8, 8, cfg.embed_dim));
  TokenSequence seq{concat_rows(enc.cls_token(), tokens), {8, 8}, true};
  Rng er(0);
  TokenSequence latent = enc.encode(seq, Mode::kEval, er);
  Tensor logit = head.logit(readout(latent, cfg.mean_pool));
  CHECK(std::isfinite(logit.item()));

  Gradients grads = backward(logit);
  std::vector<Parameter> params = enc.named_params("encoder.");
  for (std::size_t d = 1; d <= cfg.depth; ++d) {
    double norm = 0.0;
    for (const auto& p : params) {
      if (p.depth != d) continue;
      for (double g : grads.wrt(p.tensor).values()) norm += g * g;
    }
    INFO("block depth " << d);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("readout uses CLS or mean pool as configured") {
  Tensor toks = Tensor::from_data({3, 2}, {10, 20, 1, 2, 3, 4});
  TokenSequence with_cls{toks, {1, 2}, true};
  Tensor cls = readout(with_cls, false);
  CHECK(cls.at(0) == 10.0);
  CHECK(cls.at(1) == 20.0);
  Tensor pooled = readout(with_cls, true);
  CHECK(pooled.at(0) == doctest::Approx(2.0).epsilon(1e-15));  // mean of patch rows only
  CHECK(pooled.at(1) == doctest::Approx(3.0).epsilon(1e-15));

  TokenSequence no_cls{Tensor::from_data({2, 2}, {1, 2, 3, 4}), {1, 2}, false};
  CHECK_THROWS_AS((void)readout(no_cls, false), std::invalid_argument);
  Tensor pooled2 = readout(no_cls, true);
  CHECK(pooled2.at(0) == 2.0);
}

TEST_CASE("encode depends deterministically on values, not node identity") {
  ViTConfig cfg = toy_config();
  cfg.drop_path_rate = 0.0;
  Rng init(33);
  VitEncoder enc(cfg, init);
  Rng data(34);
  Tensor img = random_image(3, 32, 32, data);

  auto run = [&](const Tensor& im) {
    Tensor tokens = add(enc.embed_patches(patchify(im, cfg.patch_size)),
                        pos_embed_2d(8, 8, cfg.embed_dim));
    Rng r(0);
    TokenSequence out = enc.encode({concat_rows(enc.cls_token(), tokens), {8, 8}, true},
                                   Mode::kEval, r);
    return out.tokens.values();
  };
  const std::vector<double> a = run(img);
  const std::vector<double> b = run(Tensor::from_data(img.shape(), img.values()));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("encode_traced returns the pre-norm activations") {
  ViTConfig cfg = toy_config();
  Rng init(35);
  VitEncoder enc(cfg, init);
  Rng data(36);
  Tensor img = random_image(3, 32, 32, data);
  Tensor tokens = add(enc.embed_patches(patchify(img, cfg.patch_size)),
                      pos_embed_2d(8, 8, cfg.embed_dim));
  TokenSequence seq{concat_rows(enc.cls_token(), tokens), {8, 8}, true};
  Rng r1(0), r2(0);
  VitEncoder::EncodeTrace trace = enc.encode_traced(seq, Mode::kEval, r1);
  TokenSequence plain = enc.encode(seq, Mode::kEval, r2);
  REQUIRE(trace.last_block.shape() == Shape{65, 64});
  for (std::size_t i = 0; i < plain.tokens.numel(); ++i) {
    CHECK(trace.output.tokens.at(i) == plain.tokens.at(i));
  }
  // final norm changes values, so the trace differs from the output
  double diff = 0.0;
  for (std::size_t i = 0; i < trace.last_block.numel(); ++i) {
    diff = std::max(diff, std::abs(trace.last_block.at(i) - trace.output.tokens.at(i)));
  }
  CHECK(diff > 1e-9);
}

TEST_CASE("named params carry the depth schedule") {
  ViTConfig cfg = toy_config();
  Rng init(37);
  VitEncoder enc(cfg, init);
  std::vector<Parameter> params = enc.named_params("e.");
  std::size_t max_depth = 0;
  bool saw_embed_at_zero = false;
  for (const auto& p : params) {
    max_depth = std::max(max_depth, p.depth);
    if (p.depth == 0) saw_embed_at_zero = true;
    CHECK(p.name.rfind("e.", 0) == 0);
  }
  CHECK(saw_embed_at_zero);
  CHECK(max_depth == cfg.depth + 1);
  CHECK(enc.max_depth() == cfg.depth + 1);
}
