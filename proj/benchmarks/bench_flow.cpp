#include <benchmark/benchmark.h>

#include <masdt/flow.hpp>
#include <masdt/tensor.hpp>

#include <cmath>
#include <vector>

using namespace masdt;

namespace {

Tensor wave(std::size_t side, double shift) {
  std::vector<double> v(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double xf = static_cast<double>(x) - shift;
      const double yf = static_cast<double>(y);
      v[y * side + x] =
          0.5 + 0.2 * std::sin(0.5 * xf) * std::cos(0.3 * yf) + 0.15 * std::sin(0.2 * xf + 0.7 * yf);
    }
  }
  return Tensor::from_data({side, side}, std::move(v));
}

void BM_estimate_flow(benchmark::State& state) {
  const std::size_t side = static_cast<std::size_t>(state.range(0));
  const Tensor a = wave(side, 0.0);
  const Tensor b = wave(side, 2.0);
  FlowParams params;
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_flow(a, b, params));
  }
}
BENCHMARK(BM_estimate_flow)->Arg(32)->Arg(64);

void BM_flow_to_image(benchmark::State& state) {
  const Tensor a = wave(64, 0.0);
  const Tensor b = wave(64, 1.0);
  FlowParams params;
  const FlowField field = estimate_flow(a, b, params);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow_to_image(field, params.max_displacement));
  }
}
BENCHMARK(BM_flow_to_image);

}  // namespace
