#include <benchmark/benchmark.h>

#include <masdt/rng.hpp>
#include <masdt/tensor.hpp>

#include <vector>

using namespace masdt;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(v));
}

void BM_matmul(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng);
  const Tensor b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_matmul_backward(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  for (auto _ : state) {
    state.PauseTiming();
    Tensor a = random_tensor({n, n}, rng);
    Tensor b = random_tensor({n, n}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    state.ResumeTiming();
    Gradients grads;
    backward_into(mean_all(matmul(a, b)), grads);
    benchmark::DoNotOptimize(grads.wrt(a));
  }
}
BENCHMARK(BM_matmul_backward)->Arg(32)->Arg(64);

void BM_softmax_rows(benchmark::State& state) {
  Rng rng(3);
  const Tensor x = random_tensor({65, 65}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(softmax(x, 1));
  }
}
BENCHMARK(BM_softmax_rows);

void BM_layer_norm(benchmark::State& state) {
  Rng rng(4);
  const Tensor x = random_tensor({65, 64}, rng);
  const Tensor g = Tensor::full({1, 64}, 1.0);
  const Tensor b = Tensor::full({1, 64}, 0.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(layer_norm(x, g, b, 1e-6));
  }
}
BENCHMARK(BM_layer_norm);

}  // namespace
