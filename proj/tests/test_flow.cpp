#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "masdt/flow.hpp"
#include "masdt/rng.hpp"
#include "masdt/tensor.hpp"

using namespace masdt;

namespace {

// Smooth random texture with gradient energy in every direction; wavevectors
// confined to one quadrant would leave the flow aperture-ambiguous.
Tensor textured_frame(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> amp, fx, fy, ph;
  for (int k = 0; k < 6; ++k) {
    amp.push_back(0.05 + 0.08 * rng.uniform());
    const double mag = 0.08 + 0.22 * rng.uniform();
    const double ang = 6.28318530717958648 * rng.uniform();
    fx.push_back(mag * std::cos(ang));
    fy.push_back(mag * std::sin(ang));
    ph.push_back(6.28318 * rng.uniform());
  }
  std::vector<double> v(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.5;
      for (int k = 0; k < 6; ++k) s += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
      v[y * w + x] = std::clamp(s, 0.0, 1.0);
    }
  }
  return Tensor::from_data({h, w}, std::move(v));
}

// The same texture sampled with a subpixel-capable shift: frame2(x) = frame1(x - dx, y - dy).
Tensor shifted_frame(std::size_t h, std::size_t w, std::uint64_t seed, double dx, double dy) {
  Rng rng(seed);
  std::vector<double> amp, fx, fy, ph;
  for (int k = 0; k < 6; ++k) {
    amp.push_back(0.05 + 0.08 * rng.uniform());
    const double mag = 0.08 + 0.22 * rng.uniform();
    const double ang = 6.28318530717958648 * rng.uniform();
    fx.push_back(mag * std::cos(ang));
    fy.push_back(mag * std::sin(ang));
    ph.push_back(6.28318 * rng.uniform());
  }
  std::vector<double> v(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.5;
      for (int k = 0; k < 6; ++k)
        s += amp[k] * std::sin(fx[k] * (x - dx) + fy[k] * (y - dy) + ph[k]);
      v[y * w + x] = std::clamp(s, 0.0, 1.0);
    }
  }
  return Tensor::from_data({h, w}, std::move(v));
}

struct Epe {
  double mean = 0.0;
  double u_std = 0.0;
};

Epe interior_epe(const FlowField& field, double dx, double dy, std::size_t margin) {
  const std::size_t h = field.u.dim(0), w = field.u.dim(1);
  double sum = 0.0, usum = 0.0, usq = 0.0;
  std::size_t n = 0;
  for (std::size_t y = margin; y + margin < h; ++y) {
    for (std::size_t x = margin; x + margin < w; ++x) {
      const double du = field.u.at2(y, x) - dx;
      const double dv = field.v.at2(y, x) - dy;
      sum += std::hypot(du, dv);
      usum += field.u.at2(y, x);
      usq += field.u.at2(y, x) * field.u.at2(y, x);
      ++n;
    }
  }
  Epe e;
  e.mean = sum / n;
  const double um = usum / n;
  e.u_std = std::sqrt(std::max(0.0, usq / n - um * um));
  return e;
}

}  // namespace

TEST_CASE("identical frames give zero flow") {
  Tensor f = textured_frame(48, 48, 1);
  FlowParams params;
  FlowField field = estimate_flow(f, f, params);
  double linf = 0.0;
  for (std::size_t i = 0; i < field.u.numel(); ++i) {
    linf = std::max({linf, std::abs(field.u.at(i)), std::abs(field.v.at(i))});
  }
  CHECK(linf < 1e-6);
}

TEST_CASE("global translations of 1 to 3 px recover with epe below half a pixel") {
  FlowParams params;
  for (const auto& [dx, dy] : std::vector<std::pair<double, double>>{
           {1.0, 0.0}, {2.0, 0.0}, {3.0, 0.0}, {0.0, 2.0}, {2.0, 1.0}}) {
    Tensor a = textured_frame(48, 48, 2);
    Tensor b = shifted_frame(48, 48, 2, dx, dy);
    FlowField field = estimate_flow(a, b, params);
    const Epe e = interior_epe(field, dx, dy, 6);
    INFO("shift (" << dx << ", " << dy << ") epe " << e.mean);
    CHECK(e.mean < 0.5);
  }
}

TEST_CASE("flow on a 3 px translation is spatially near constant") {
  FlowParams params;
  Tensor a = textured_frame(48, 48, 3);
  Tensor b = shifted_frame(48, 48, 3, 3.0, 0.0);
  FlowField field = estimate_flow(a, b, params);
  const Epe e = interior_epe(field, 3.0, 0.0, 6);
  CHECK(e.u_std < 0.3);
}

TEST_CASE("swapping frame order approximately negates the flow") {
  FlowParams params;
  Tensor a = textured_frame(48, 48, 4);
  Tensor b = shifted_frame(48, 48, 4, 2.0, 0.0);
  FlowField fwd = estimate_flow(a, b, params);
  FlowField bwd = estimate_flow(b, a, params);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 6; y + 6 < 48; ++y) {
    for (std::size_t x = 6; x + 6 < 48; ++x) {
      sum += std::hypot(fwd.u.at2(y, x) + bwd.u.at2(y, x), fwd.v.at2(y, x) + bwd.v.at2(y, x));
      ++n;
    }
  }
  CHECK(sum / n < 0.5);
}

TEST_CASE("level residuals decrease coarse to fine on translations") {
  FlowParams params;
  Tensor a = textured_frame(48, 48, 5);
  Tensor b = shifted_frame(48, 48, 5, 2.0, 1.0);
  FlowDiagnostics diag;
  (void)estimate_flow(a, b, params, &diag);
  REQUIRE(diag.level_residuals.size() == params.levels);
  for (std::size_t i = 1; i < diag.level_residuals.size(); ++i) {
    CHECK(diag.level_residuals[i] <= diag.level_residuals[i - 1] + 1e-9);
  }
}

TEST_CASE("estimate_flow validates its inputs") {
  FlowParams params;
  Tensor a = textured_frame(32, 32, 6);
  Tensor b = textured_frame(32, 16, 6);
  CHECK_THROWS_AS((void)estimate_flow(a, b, params), std::invalid_argument);

  std::vector<double> bad(32 * 32, 0.5);
  bad[5] = 2.0;  // outside [0,1]
  CHECK_THROWS_AS((void)estimate_flow(Tensor::from_data({32, 32}, bad), a, params),
                  std::invalid_argument);

  // pyramid depth clamps so the coarsest level stays at 8 px or wider
  FlowParams deep;
  deep.levels = 6;
  FlowDiagnostics diag;
  FlowField field = estimate_flow(a, a, deep, &diag);
  CHECK(field.u.shape() == Shape{32, 32});
  CHECK(diag.level_residuals.size() == 3);  // 32 -> 16 -> 8, then 4 would be too small

  FlowParams negative;
  negative.lambda = 0.0;
  CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
}

TEST_CASE("flow_to_image encodes the three channels") {
  FlowField zero{Tensor::zeros({4, 4}), Tensor::zeros({4, 4})};
  Tensor img = flow_to_image(zero, 4.0);
  REQUIRE(img.shape() == Shape{3, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(img.at(i) == doctest::Approx(0.5).epsilon(1e-15));        // u channel
    CHECK(img.at(16 + i) == doctest::Approx(0.5).epsilon(1e-15));   // v channel
    CHECK(img.at(32 + i) == 0.0);                                    // magnitude
  }

  FlowField max_u{Tensor::full({2, 2}, 4.0), Tensor::zeros({2, 2})};
  Tensor m = flow_to_image(max_u, 4.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(m.at(i) == 1.0);
    CHECK(m.at(4 + i) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.at(8 + i) == 1.0);
  }

  FlowField mixed{Tensor::from_data({1, 2}, {1.0, -9.0}), Tensor::from_data({1, 2}, {2.0, 0.0})};
  Tensor mm = flow_to_image(mixed, 4.0);
  CHECK(mm.at(4) == doctest::Approx(std::sqrt(5.0) / 4.0).epsilon(1e-12));
  CHECK(mm.at(0) == doctest::Approx((1.0 / 4.0 + 1.0) / 2.0).epsilon(1e-12));
  CHECK(mm.at(1) == 0.0);   // u clamped to -D
  CHECK(mm.at(5) == 1.0);   // magnitude clamped to D
  for (std::size_t i = 0; i < mm.numel(); ++i) {
    CHECK(mm.at(i) >= 0.0);
    CHECK(mm.at(i) <= 1.0);
  }
}

TEST_CASE("warp identity, integer shift, and residual reduction") {
  Tensor f = textured_frame(32, 32, 7);
  FlowField zero{Tensor::zeros({32, 32}), Tensor::zeros({32, 32})};
  Tensor same = warp(f, zero);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(same.at(i) == doctest::Approx(f.at(i)).epsilon(1e-14));

  // f_t1(x) = f_t(x - d) makes the true field u = d: warp samples f_t1 at x + u
  Tensor a = textured_frame(32, 32, 8);
  Tensor b = shifted_frame(32, 32, 8, 2.0, 0.0);
  FlowField truth{Tensor::full({32, 32}, 2.0), Tensor::zeros({32, 32})};
  Tensor recovered = warp(b, truth);
  for (std::size_t y = 4; y < 28; ++y) {
    for (std::size_t x = 4; x < 28; ++x) {
      CHECK(std::abs(recovered.at2(y, x) - a.at2(y, x)) < 1e-9);
    }
  }

  FlowParams params;
  FlowField est = estimate_flow(a, b, params);
  Tensor warped = warp(b, est);
  double mse_before = 0.0, mse_after = 0.0;
  for (std::size_t y = 4; y < 28; ++y) {
    for (std::size_t x = 4; x < 28; ++x) {
      mse_before += (b.at2(y, x) - a.at2(y, x)) * (b.at2(y, x) - a.at2(y, x));
      mse_after += (warped.at2(y, x) - a.at2(y, x)) * (warped.at2(y, x) - a.at2(y, x));
    }
  }
  CHECK(mse_after < 0.5 * mse_before);
}

TEST_CASE("grayscale uses the luminance weights") {
  Tensor rgb = Tensor::from_data({3, 1, 2}, {1.0, 0.0, 0.0, 1.0, 0.0, 0.5});
  Tensor g = grayscale(rgb);
  REQUIRE(g.shape() == Shape{1, 2});
  CHECK(g.at(0) == doctest::Approx(0.299).epsilon(1e-12));
  CHECK(g.at(1) == doctest::Approx(0.299 * 0.0 + 0.587 * 1.0 + 0.114 * 0.5).epsilon(1e-12));
}

TEST_CASE("flow cache round trips through the binary record") {
  Rng rng(9);
  std::vector<double> u(6 * 5), v(6 * 5);
  for (double& x : u) x = rng.normal();
  for (double& x : v) x = rng.normal();
  FlowField field{Tensor::from_data({6, 5}, u), Tensor::from_data({6, 5}, v)};

  const std::string path =
      (std::filesystem::temp_directory_path() / "masdt_flow_test.mflw").string();
  save_flow(field, path);
  FlowField loaded = load_flow(path);
  REQUIRE(loaded.u.shape() == Shape{6, 5});
  for (std::size_t i = 0; i < field.u.numel(); ++i) {
    // float32 storage: round trip within single-precision epsilon
    CHECK(loaded.u.at(i) == doctest::Approx(field.u.at(i)).epsilon(1e-6));
    CHECK(loaded.v.at(i) == doctest::Approx(field.v.at(i)).epsilon(1e-6));
  }

  // byte-level header
  FILE* fh = std::fopen(path.c_str(), "rb");
  REQUIRE(fh != nullptr);
  unsigned char header[12];
  REQUIRE(std::fread(header, 1, 12, fh) == 12);
  std::fclose(fh);
  CHECK(header[0] == 'M');
  CHECK(header[1] == 'F');
  CHECK(header[2] == 'L');
  CHECK(header[3] == 'W');
  const unsigned h = header[6] | (header[7] << 8) | (header[8] << 16) | (unsigned(header[9]) << 24);
  CHECK(h == 6);
  std::filesystem::remove(path);
}

TEST_CASE("load_flow rejects truncated or misidentified files") {
  const std::string path =
      (std::filesystem::temp_directory_path() / "masdt_flow_bad.mflw").string();
  {
    FILE* fh = std::fopen(path.c_str(), "wb");
    REQUIRE(fh != nullptr);
    std::fwrite("NOPE", 1, 4, fh);
    std::fclose(fh);
  }
  CHECK_THROWS_AS((void)load_flow(path), std::runtime_error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)load_flow(path), std::runtime_error);
}
