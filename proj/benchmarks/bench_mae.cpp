#include <benchmark/benchmark.h>

#include <masdt/mae.hpp>
#include <masdt/rng.hpp>
#include <masdt/tensor.hpp>

#include <vector>

using namespace masdt;

namespace {

void BM_random_mask(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(random_mask(196, 0.9, seed++));
  }
}
BENCHMARK(BM_random_mask);

void BM_mae_forward(benchmark::State& state) {
  MAEConfig cfg;  // toy encoder, 64 patches, 6 visible at ratio 0.9
  const MaeModel model(cfg, 7);
  Rng rng(8);
  std::vector<double> v(3 * 32 * 32);
  for (double& x : v) x = rng.uniform();
  const Tensor image = Tensor::from_data({3, 32, 32}, std::move(v));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const PatchMask mask = random_mask(cfg.encoder.num_patches(), cfg.mask_ratio, seed++);
    Rng pass(9);
    benchmark::DoNotOptimize(model.forward(image, mask, Mode::kEval, pass));
  }
}
BENCHMARK(BM_mae_forward);

void BM_mae_step(benchmark::State& state) {
  MAEConfig cfg;
  const MaeModel model(cfg, 7);
  Rng rng(8);
  std::vector<double> v(3 * 32 * 32);
  for (double& x : v) x = rng.uniform();
  const Tensor image = Tensor::from_data({3, 32, 32}, std::move(v));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const PatchMask mask = random_mask(cfg.encoder.num_patches(), cfg.mask_ratio, seed++);
    Rng pass(9);
    const MaeOutput out = model.forward(image, mask, Mode::kTrain, pass);
    Gradients grads;
    backward_into(out.loss, grads);
    benchmark::DoNotOptimize(grads);
  }
}
BENCHMARK(BM_mae_step);

}  // namespace
