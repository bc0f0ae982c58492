#include "masdt/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "masdt/utils.hpp"

namespace masdt {

namespace {

struct Grid2 {
  std::size_t h = 0, w = 0;
  std::vector<double> v;

  double at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
  double& at(std::size_t y, std::size_t x) { return v[y * w + x]; }
  double clamped(long y, long x) const {
    const long yy = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    const long xx = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return v[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
  }
};

Grid2 make_grid(std::size_t h, std::size_t w) { return Grid2{h, w, std::vector<double>(h * w, 0.0)}; }

Grid2 from_tensor(const Tensor& t) {
  Grid2 g;
  g.h = t.dim(0);
  g.w = t.dim(1);
  g.v = t.values();
  return g;
}

double sample_bilinear(const Grid2& g, double y, double x) {
  const double yc = std::clamp(y, 0.0, static_cast<double>(g.h - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(g.w - 1));
  const std::size_t y0 = static_cast<std::size_t>(yc);
  const std::size_t x0 = static_cast<std::size_t>(xc);
  const std::size_t y1 = std::min(y0 + 1, g.h - 1);
  const std::size_t x1 = std::min(x0 + 1, g.w - 1);
  const double fy = yc - static_cast<double>(y0);
  const double fx = xc - static_cast<double>(x0);
  const double top = g.at(y0, x0) + fx * (g.at(y0, x1) - g.at(y0, x0));
  const double bot = g.at(y1, x0) + fx * (g.at(y1, x1) - g.at(y1, x0));
  return top + fy * (bot - top);
}

Grid2 warp_grid(const Grid2& f, const Grid2& u, const Grid2& v) {
  Grid2 out = make_grid(f.h, f.w);
  for (std::size_t y = 0; y < f.h; ++y)
    for (std::size_t x = 0; x < f.w; ++x)
      out.at(y, x) = sample_bilinear(f, static_cast<double>(y) + v.at(y, x), static_cast<double>(x) + u.at(y, x));
  return out;
}

Grid2 resize_bilinear(const Grid2& g, std::size_t nh, std::size_t nw) {
  Grid2 out = make_grid(nh, nw);
  for (std::size_t y = 0; y < nh; ++y) {
    const double sy = nh == 1 ? 0.0
                              : static_cast<double>(y) * static_cast<double>(g.h - 1) /
                                    static_cast<double>(nh - 1);
    for (std::size_t x = 0; x < nw; ++x) {
      const double sx = nw == 1 ? 0.0
                                : static_cast<double>(x) * static_cast<double>(g.w - 1) /
                                      static_cast<double>(nw - 1);
      out.at(y, x) = sample_bilinear(g, sy, sx);
    }
  }
  return out;
}

Grid2 downsample(const Grid2& g, double factor) {
  const std::size_t nh = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(g.h * factor)));
  const std::size_t nw = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(g.w * factor)));
  if (factor == 0.5 && g.h % 2 == 0 && g.w % 2 == 0) {
    Grid2 out = make_grid(nh, nw);
    for (std::size_t y = 0; y < nh; ++y)
      for (std::size_t x = 0; x < nw; ++x)
        out.at(y, x) = 0.25 * (g.at(2 * y, 2 * x) + g.at(2 * y, 2 * x + 1) + g.at(2 * y + 1, 2 * x) +
                               g.at(2 * y + 1, 2 * x + 1));
    return out;
  }
  return resize_bilinear(g, nh, nw);
}

// central differences, replicated border
void gradients(const Grid2& g, Grid2& gx, Grid2& gy) {
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t x = 0; x < g.w; ++x) {
      const long yl = static_cast<long>(y), xl = static_cast<long>(x);
      gx.at(y, x) = 0.5 * (g.clamped(yl, xl + 1) - g.clamped(yl, xl - 1));
      gy.at(y, x) = 0.5 * (g.clamped(yl + 1, xl) - g.clamped(yl - 1, xl));
    }
  }
}

double neighbor_avg(const Grid2& g, long y, long x) {
  return 0.25 * (g.clamped(y - 1, x) + g.clamped(y + 1, x) + g.clamped(y, x - 1) + g.clamped(y, x + 1));
}

double mean_abs_diff(const Grid2& a, const Grid2& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += std::abs(a.v[i] - b.v[i]);
  return s / static_cast<double>(a.v.size());
}

void check_frame(const Tensor& f, const char* what) {
  if (f.ndim() != 2) throw std::invalid_argument(std::string(what) + ": expected grayscale [H x W]");
  for (double x : f.values()) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite pixel");
    if (x < -1e-9 || x > 1.0 + 1e-9) throw std::invalid_argument(std::string(what) + ": pixel outside [0,1]");
  }
}

}  // namespace

void FlowParams::validate() const {
  if (!(lambda > 0)) throw std::invalid_argument("flow: lambda must be positive");
  if (iterations == 0) throw std::invalid_argument("flow: iterations must be positive");
  if (levels == 0) throw std::invalid_argument("flow: levels must be positive");
  if (!(downscale > 0.0 && downscale < 1.0)) throw std::invalid_argument("flow: downscale must be in (0,1)");
  if (warps_per_level == 0) throw std::invalid_argument("flow: warps_per_level must be positive");
  if (!(max_displacement > 0)) throw std::invalid_argument("flow: max_displacement must be positive");
}

FlowField estimate_flow(const Tensor& f_t, const Tensor& f_t1, const FlowParams& params,
                        FlowDiagnostics* diag) {
  params.validate();
  check_frame(f_t, "estimate_flow");
  check_frame(f_t1, "estimate_flow");
  if (f_t.shape() != f_t1.shape()) {
    throw std::invalid_argument("estimate_flow: frame shapes differ, " + shape_str(f_t.shape()) + " vs " +
                                shape_str(f_t1.shape()));
  }

  // pyramid, level 0 finest; clamp depth so the coarsest level stays >= 8 px
  std::vector<Grid2> p1{from_tensor(f_t)}, p2{from_tensor(f_t1)};
  while (p1.size() < params.levels) {
    const Grid2& prev = p1.back();
    const std::size_t nh = static_cast<std::size_t>(std::floor(prev.h * params.downscale));
    const std::size_t nw = static_cast<std::size_t>(std::floor(prev.w * params.downscale));
    if (nh < 8 || nw < 8) break;
    p1.push_back(downsample(prev, params.downscale));
    p2.push_back(downsample(p2.back(), params.downscale));
  }

  Grid2 u, v;
  if (diag) diag->level_residuals.clear();
  for (std::size_t li = p1.size(); li-- > 0;) {
    const Grid2& a = p1[li];
    const Grid2& b = p2[li];
    if (li + 1 == p1.size()) {
      u = make_grid(a.h, a.w);
      v = make_grid(a.h, a.w);
    } else {
      const double sx = static_cast<double>(a.w) / static_cast<double>(u.w);
      const double sy = static_cast<double>(a.h) / static_cast<double>(u.h);
      u = resize_bilinear(u, a.h, a.w);
      v = resize_bilinear(v, a.h, a.w);
      for (double& x : u.v) x *= sx;
      for (double& x : v.v) x *= sy;
    }

    Grid2 gx1 = make_grid(a.h, a.w), gy1 = make_grid(a.h, a.w);
    Grid2 gx2 = make_grid(a.h, a.w), gy2 = make_grid(a.h, a.w);
    gradients(a, gx1, gy1);
    for (std::size_t wi = 0; wi < params.warps_per_level; ++wi) {
      const Grid2 warped = warp_grid(b, u, v);
      gradients(warped, gx2, gy2);
      Grid2 ix = make_grid(a.h, a.w), iy = make_grid(a.h, a.w), it = make_grid(a.h, a.w);
      for (std::size_t i = 0; i < ix.v.size(); ++i) {
        ix.v[i] = 0.5 * (gx1.v[i] + gx2.v[i]);
        iy.v[i] = 0.5 * (gy1.v[i] + gy2.v[i]);
        it.v[i] = warped.v[i] - a.v[i];
      }
      // over-relaxed Gauss-Seidel sweeps on the increment, raster order so the
      // solve stays deterministic; lambda plays alpha^2
      constexpr double kOmega = 1.9;
      Grid2 du = make_grid(a.h, a.w), dv = make_grid(a.h, a.w);
      for (std::size_t iter = 0; iter < params.iterations; ++iter) {
        for (std::size_t y = 0; y < a.h; ++y) {
          for (std::size_t x = 0; x < a.w; ++x) {
            const long yl = static_cast<long>(y), xl = static_cast<long>(x);
            const double ub = neighbor_avg(du, yl, xl);
            const double vb = neighbor_avg(dv, yl, xl);
            const double gxv = ix.at(y, x), gyv = iy.at(y, x);
            const double t = (gxv * ub + gyv * vb + it.at(y, x)) / (params.lambda + gxv * gxv + gyv * gyv);
            du.at(y, x) += kOmega * (ub - gxv * t - du.at(y, x));
            dv.at(y, x) += kOmega * (vb - gyv * t - dv.at(y, x));
          }
        }
      }
      for (std::size_t i = 0; i < u.v.size(); ++i) {
        u.v[i] += du.v[i];
        v.v[i] += dv.v[i];
      }
    }
    if (diag) diag->level_residuals.push_back(mean_abs_diff(a, warp_grid(b, u, v)));
  }

  FlowField out;
  out.u = Tensor::from_data({u.h, u.w}, u.v);
  out.v = Tensor::from_data({v.h, v.w}, v.v);
  return out;
}

Tensor flow_to_image(const FlowField& field, double max_displacement) {
  if (!(max_displacement > 0)) throw std::invalid_argument("flow_to_image: max_displacement must be positive");
  if (field.u.ndim() != 2 || field.u.shape() != field.v.shape()) {
    throw std::invalid_argument("flow_to_image: u and v must be matching [H x W]");
  }
  const std::size_t H = field.u.dim(0), W = field.u.dim(1);
  const auto& uv = field.u.values();
  const auto& vv = field.v.values();
  const double D = max_displacement;
  std::vector<double> out(3 * H * W);
  for (std::size_t i = 0; i < H * W; ++i) {
    const double u = uv[i], v = vv[i];
    out[i] = (std::clamp(u, -D, D) / D + 1.0) * 0.5;
    out[H * W + i] = (std::clamp(v, -D, D) / D + 1.0) * 0.5;
    out[2 * H * W + i] = std::min(std::sqrt(u * u + v * v), D) / D;
  }
  return Tensor::from_data({3, H, W}, std::move(out));
}

Tensor warp(const Tensor& frame, const FlowField& field) {
  if (field.u.ndim() != 2 || field.u.shape() != field.v.shape()) {
    throw std::invalid_argument("warp: u and v must be matching [H x W]");
  }
  const Grid2 u = from_tensor(field.u);
  const Grid2 v = from_tensor(field.v);
  if (frame.ndim() == 2) {
    if (frame.shape() != field.u.shape()) throw std::invalid_argument("warp: frame/field shape mismatch");
    Grid2 g = from_tensor(frame);
    Grid2 out = warp_grid(g, u, v);
    return Tensor::from_data(frame.shape(), std::move(out.v));
  }
  if (frame.ndim() == 3) {
    const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
    if (H != u.h || W != u.w) throw std::invalid_argument("warp: frame/field shape mismatch");
    std::vector<double> out(C * H * W);
    for (std::size_t c = 0; c < C; ++c) {
      Grid2 g{H, W, std::vector<double>(frame.values().begin() + c * H * W,
                                        frame.values().begin() + (c + 1) * H * W)};
      Grid2 wb = warp_grid(g, u, v);
      std::copy(wb.v.begin(), wb.v.end(), out.begin() + c * H * W);
    }
    return Tensor::from_data(frame.shape(), std::move(out));
  }
  throw std::invalid_argument("warp: expected [H x W] or [C x H x W]");
}

Tensor grayscale(const Tensor& rgb) {
  if (rgb.ndim() != 3 || rgb.dim(0) != 3) {
    throw std::invalid_argument("grayscale: expected [3 x H x W], got " + shape_str(rgb.shape()));
  }
  const std::size_t H = rgb.dim(1), W = rgb.dim(2);
  const auto& v = rgb.values();
  std::vector<double> out(H * W);
  for (std::size_t i = 0; i < H * W; ++i) {
    out[i] = 0.299 * v[i] + 0.587 * v[H * W + i] + 0.114 * v[2 * H * W + i];
  }
  return Tensor::from_data({H, W}, std::move(out));
}

void save_flow(const FlowField& field, const std::string& path) {
  if (field.u.ndim() != 2 || field.u.shape() != field.v.shape()) {
    throw std::invalid_argument("save_flow: u and v must be matching [H x W]");
  }
  const std::size_t H = field.u.dim(0), W = field.u.dim(1);
  std::string out = "MFLW";
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(H));
  put_u32(out, static_cast<std::uint32_t>(W));
  for (double x : field.u.values()) put_f32(out, static_cast<float>(x));
  for (double x : field.v.values()) put_f32(out, static_cast<float>(x));
  write_file_atomic(path, out);
}

FlowField load_flow(const std::string& path) {
  const std::string buf = read_file(path);
  if (buf.size() < 14 || buf.compare(0, 4, "MFLW") != 0) {
    throw std::runtime_error("flow cache " + path + ": bad magic");
  }
  std::size_t pos = 4;
  const std::uint16_t version = get_u16(buf, pos);
  if (version != 1) throw std::runtime_error("flow cache " + path + ": unsupported version");
  const std::size_t H = get_u32(buf, pos);
  const std::size_t W = get_u32(buf, pos);
  if (buf.size() != 14 + 2 * H * W * 4) throw std::runtime_error("flow cache " + path + ": truncated");
  std::vector<double> u(H * W), v(H * W);
  for (std::size_t i = 0; i < H * W; ++i) u[i] = get_f32(buf, pos);
  for (std::size_t i = 0; i < H * W; ++i) v[i] = get_f32(buf, pos);
  FlowField f;
  f.u = Tensor::from_data({H, W}, std::move(u));
  f.v = Tensor::from_data({H, W}, std::move(v));
  return f;
}

}  // namespace masdt
