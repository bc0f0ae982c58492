#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace masdt {

// Mixes two 64-bit values into a new seed (splitmix64 finalizer). Used to
// derive independent deterministic streams: mix64(seed, stream_id).
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

// Deterministic RNG. All distributions are implemented on top of the raw
// mt19937_64 output stream so sequences are identical across standard
// libraries and runs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform double in [0, 1), 53-bit resolution.
  double uniform();

  // Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller (second value cached).
  double normal();

  // Normal(0, stddev) resampled until |z| <= bound stddevs.
  double trunc_normal(double stddev, double bound = 2.0);

  // Beta(a, b) via two Gamma draws.
  double beta(double a, double b);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  double gamma(double shape);

  std::mt19937_64 eng_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace masdt
