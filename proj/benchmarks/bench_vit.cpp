#include <benchmark/benchmark.h>

#include <masdt/detect.hpp>
#include <masdt/rng.hpp>
#include <masdt/tensor.hpp>
#include <masdt/vit.hpp>

#include <vector>

using namespace masdt;

namespace {

Tensor random_image(const ViTConfig& cfg, Rng& rng) {
  std::vector<double> v(cfg.in_channels * cfg.image_size * cfg.image_size);
  for (double& x : v) x = rng.uniform();
  return Tensor::from_data({cfg.in_channels, cfg.image_size, cfg.image_size}, std::move(v));
}

void BM_encode(benchmark::State& state) {
  ViTConfig cfg;
  cfg.depth = static_cast<std::size_t>(state.range(0));
  const BranchModel branch(BranchKind::kSpatial, cfg, 1);
  Rng rng(2);
  const Tensor image = random_image(cfg, rng);
  const TokenSequence tokens = branch.tokens_for(image);
  for (auto _ : state) {
    Rng pass(3);
    benchmark::DoNotOptimize(branch.encoder().encode(tokens, Mode::kEval, pass));
  }
}
BENCHMARK(BM_encode)->Arg(2)->Arg(4);

void BM_block_forward_backward(benchmark::State& state) {
  Rng init(4);
  BlockParams block = BlockParams::init(64, 256, init);
  Rng rng(5);
  std::vector<double> v(65 * 64);
  for (double& x : v) x = rng.normal() * 0.5;
  for (auto _ : state) {
    Tensor x = Tensor::from_data({65, 64}, v, true);
    Rng pass(6);
    Gradients grads;
    backward_into(mean_all(block.forward(x, 4, 0.0, Mode::kTrain, pass)), grads);
    benchmark::DoNotOptimize(grads.wrt(x));
  }
}
BENCHMARK(BM_block_forward_backward);

void BM_patchify(benchmark::State& state) {
  ViTConfig cfg;
  Rng rng(7);
  const Tensor image = random_image(cfg, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(patchify(image, cfg.patch_size));
  }
}
BENCHMARK(BM_patchify);

}  // namespace
