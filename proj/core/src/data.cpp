#include "masdt/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "masdt/image_io.hpp"
#include "masdt/rng.hpp"
#include "masdt/utils.hpp"

namespace masdt {

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kTau = 2.0 * kPi;

double sq(double v) { return v * v; }

// 1 inside the ellipse, 0 outside, smooth over `feather` px at the rim.
// Exactly 0 beyond the rim, so untouched pixels stay bitwise untouched.
double ellipse_alpha(double x, double y, double cx, double cy, double rx, double ry,
                     double feather) {
  const double d = std::sqrt(sq((x - cx) / rx) + sq((y - cy) / ry));
  const double w = feather / std::min(rx, ry);
  const double t = std::clamp((1.0 - d) / w, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct Grating {
  double fx = 0.0, fy = 0.0, amp = 0.0;
  std::array<double, 3> phase{};
};

// Everything the real clip needs. Drawn from one stream in a fixed order so
// the paired fake clip reproduces it exactly.
struct Scene {
  std::size_t T = 0, H = 0, W = 0;
  std::array<double, 3> bg_base{};
  Grating g1, g2;
  double cx0 = 0, cy0 = 0, vx = 0, vy = 0, rx = 0, ry = 0;
  double deform_amp = 0, deform_phase = 0;
  std::array<double, 3> face_col{};
  double eye_dx = 0, eye_dy = 0, eye_r = 0;
  double mouth_dy = 0, mouth_rx = 0, mouth_ry = 0;
  double feat_shade = 0;
  double patch_cx = 0, patch_cy = 0, patch_r = 0, patch_factor = 1.0;

  double face_cx(std::size_t t) const { return cx0 + vx * static_cast<double>(t); }
  double face_cy(std::size_t t) const { return cy0 + vy * static_cast<double>(t); }
  double face_rx(std::size_t t) const {
    return rx * (1.0 + deform_amp * std::sin(kTau * static_cast<double>(t) / 8.0 + deform_phase));
  }
  double face_ry(std::size_t t) const {
    return ry * (1.0 - deform_amp * std::sin(kTau * static_cast<double>(t) / 8.0 + deform_phase));
  }
};

Scene draw_scene(std::uint64_t seed, std::size_t T, std::size_t H, std::size_t W) {
  Rng rng(mix64(seed, 101));
  Scene s;
  s.T = T;
  s.H = H;
  s.W = W;
  const double dw = static_cast<double>(W), dh = static_cast<double>(H);
  for (auto& b : s.bg_base) b = 0.42 + 0.10 * rng.uniform();
  s.g1.fx = 0.03 + 0.04 * rng.uniform();
  s.g1.fy = 0.03 + 0.04 * rng.uniform();
  s.g1.amp = 0.06 + 0.04 * rng.uniform();
  for (auto& p : s.g1.phase) p = kTau * rng.uniform();
  s.g2.fx = 0.08 + 0.07 * rng.uniform();
  s.g2.fy = 0.08 + 0.07 * rng.uniform();
  s.g2.amp = 0.03 + 0.03 * rng.uniform();
  for (auto& p : s.g2.phase) p = kTau * rng.uniform();
  s.cx0 = (0.40 + 0.20 * rng.uniform()) * dw;
  s.cy0 = (0.40 + 0.20 * rng.uniform()) * dh;
  s.vx = (2.0 * rng.uniform() - 1.0) * kMaxMotionStep;
  s.vy = (2.0 * rng.uniform() - 1.0) * kMaxMotionStep;
  s.rx = (0.20 + 0.06 * rng.uniform()) * dw;
  s.ry = (0.22 + 0.06 * rng.uniform()) * dh;
  const double steps = static_cast<double>(T - 1);
  s.vx = std::clamp(s.vx, (0.30 * dw - s.cx0) / steps, (0.70 * dw - s.cx0) / steps);
  s.vy = std::clamp(s.vy, (0.30 * dh - s.cy0) / steps, (0.70 * dh - s.cy0) / steps);
  s.deform_amp = 0.03 * rng.uniform();
  s.deform_phase = kTau * rng.uniform();
  s.face_col[0] = 0.55 + 0.20 * rng.uniform();
  s.face_col[1] = 0.40 + 0.15 * rng.uniform();
  s.face_col[2] = 0.30 + 0.12 * rng.uniform();
  s.eye_dx = (0.34 + 0.06 * rng.uniform()) * s.rx;
  s.eye_dy = (0.22 + 0.06 * rng.uniform()) * s.ry;
  s.eye_r = (0.11 + 0.03 * rng.uniform()) * std::min(s.rx, s.ry);
  s.mouth_dy = (0.42 + 0.06 * rng.uniform()) * s.ry;
  s.mouth_rx = (0.30 + 0.06 * rng.uniform()) * s.rx;
  s.mouth_ry = (0.10 + 0.04 * rng.uniform()) * s.ry;
  s.feat_shade = 0.10 + 0.06 * rng.uniform();
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  s.patch_factor = 1.0 + sign * (0.08 + 0.07 * rng.uniform());
  s.patch_r = (0.10 + 0.04 * rng.uniform()) * std::min(dw, dh);
  // drop the shading patch clear of the face's whole path; best candidate
  // wins if nothing clears the bar
  double best_x = dw * 0.5, best_y = dh * 0.5, best_d = -1.0;
  const double margin = s.patch_r + 2.0;
  const double span_x = std::max(dw - 2.0 * margin, 1.0);
  const double span_y = std::max(dh - 2.0 * margin, 1.0);
  for (int attempt = 0; attempt < 20; ++attempt) {
    const double px = margin + rng.uniform() * span_x;
    const double py = margin + rng.uniform() * span_y;
    double dmin = 1e9;
    for (std::size_t t = 0; t < T; ++t) {
      const double d = std::sqrt(sq((px - s.face_cx(t)) / (s.rx + s.patch_r + 2.0)) +
                                 sq((py - s.face_cy(t)) / (s.ry + s.patch_r + 2.0)));
      dmin = std::min(dmin, d);
    }
    if (dmin > best_d) {
      best_d = dmin;
      best_x = px;
      best_y = py;
    }
    if (dmin > 1.0) break;
  }
  s.patch_cx = best_x;
  s.patch_cy = best_y;
  return s;
}

// Plaid-textured foreign patch riding the face. The plaid lives in
// patch-local coordinates so it translates rigidly with no shimmer.
struct SpatialArtifact {
  double ox = 0, oy = 0;
  double rx = 1, ry = 1;
  double period = 3.0, pa = 0, pb = 0;
  double amp = 0;
  std::array<double, 3> col{};
};

SpatialArtifact draw_spatial(const Scene& s, std::uint64_t seed) {
  Rng rng(mix64(seed, 202));
  SpatialArtifact a;
  a.ox = (rng.uniform() * 0.30 - 0.15) * s.rx;
  a.oy = (rng.uniform() * 0.20 - 0.10) * s.ry;
  a.rx = (0.40 + 0.10 * rng.uniform()) * s.rx;
  a.ry = (0.40 + 0.10 * rng.uniform()) * s.ry;
  a.period = 2.8 + 0.8 * rng.uniform();
  a.pa = kTau * rng.uniform();
  a.pb = kTau * rng.uniform();
  a.amp = 0.15 + 0.10 * rng.uniform();
  a.col[0] = s.face_col[0] * 0.55;
  a.col[1] = std::min(s.face_col[1] * 1.20 + 0.12, 0.80);
  a.col[2] = s.face_col[2] * 0.55;
  return a;
}

// The shading patch re-rolls its gain from the same distribution the real
// clip drew from, and wanders a little. Single frames stay in-distribution;
// only the time axis gives the game away.
struct TemporalArtifact {
  std::vector<double> factor, dx, dy;
};

TemporalArtifact draw_temporal(std::uint64_t seed, std::size_t T) {
  Rng rng(mix64(seed, 303));
  TemporalArtifact a;
  a.factor.resize(T);
  a.dx.resize(T);
  a.dy.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    a.factor[t] = 1.0 + sign * (0.08 + 0.07 * rng.uniform());
    a.dx[t] = 3.0 * rng.uniform() - 1.5;
    a.dy[t] = 3.0 * rng.uniform() - 1.5;
  }
  return a;
}

void render_frame(const Scene& s, std::size_t t, const SpatialArtifact* sa,
                  const TemporalArtifact* ta, std::vector<double>& out) {
  const std::size_t H = s.H, W = s.W;
  out.assign(3 * H * W, 0.0);
  const double cx = s.face_cx(t), cy = s.face_cy(t);
  const double frx = s.face_rx(t), fry = s.face_ry(t);
  const double pf = ta ? ta->factor[t] : s.patch_factor;
  const double pcx = s.patch_cx + (ta ? ta->dx[t] : 0.0);
  const double pcy = s.patch_cy + (ta ? ta->dy[t] : 0.0);
  const double scx = sa ? cx + sa->ox : 0.0;
  const double scy = sa ? cy + sa->oy : 0.0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double beta = ellipse_alpha(fx, fy, pcx, pcy, s.patch_r, s.patch_r, 1.5);
      const double gain = 1.0 + (pf - 1.0) * beta;
      const double alpha = ellipse_alpha(fx, fy, cx, cy, frx, fry, 1.0);
      const double dn = std::min(std::sqrt(sq((fx - cx) / frx) + sq((fy - cy) / fry)), 1.0);
      const double shade = 1.0 - 0.18 * dn * dn;
      const double ae1 = ellipse_alpha(fx, fy, cx - s.eye_dx, cy - s.eye_dy, s.eye_r, s.eye_r, 0.8);
      const double ae2 = ellipse_alpha(fx, fy, cx + s.eye_dx, cy - s.eye_dy, s.eye_r, s.eye_r, 0.8);
      const double am = ellipse_alpha(fx, fy, cx, cy + s.mouth_dy, s.mouth_rx, s.mouth_ry, 0.8);
      const double feat = std::max(ae1, std::max(ae2, am));
      double bp = 0.0, pat = 0.0;
      if (sa) {
        bp = ellipse_alpha(fx, fy, scx, scy, sa->rx, sa->ry, 0.6);
        const double u = fx - scx, v = fy - scy;
        pat = std::sin(kTau * u / sa->period + sa->pa) * std::sin(kTau * v / sa->period + sa->pb);
      }
      for (int c = 0; c < 3; ++c) {
        double v = s.bg_base[c] +
                   s.g1.amp * std::sin(kTau * (s.g1.fx * fx + s.g1.fy * fy) + s.g1.phase[c]) +
                   s.g2.amp * std::sin(kTau * (s.g2.fx * fx + s.g2.fy * fy) + s.g2.phase[c]);
        v *= gain;
        v = v * (1.0 - alpha) + s.face_col[c] * shade * alpha;
        v = v * (1.0 - feat) + s.feat_shade * feat;
        if (sa) {
          const double pv = std::clamp(sa->col[c] + sa->amp * pat, 0.05, 0.95);
          v = v * (1.0 - bp) + pv * bp;
        }
        out[(c * H + y) * W + x] = std::clamp(v, 0.02, 0.98);
      }
    }
  }
}

void mark_ellipse(std::vector<char>& fp, std::size_t H, std::size_t W, double cx, double cy,
                  double rx, double ry, double feather) {
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (ellipse_alpha(static_cast<double>(x), static_cast<double>(y), cx, cy, rx, ry, feather) >
          0.0) {
        fp[y * W + x] = 1;
      }
    }
  }
}

std::vector<char> dilate(const std::vector<char>& m, std::size_t H, std::size_t W, int r) {
  std::vector<char> out(H * W, 0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!m[y * W + x]) continue;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (dy * dy + dx * dx > r * r) continue;
          const long ny = static_cast<long>(y) + dy, nx = static_cast<long>(x) + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(H) || nx >= static_cast<long>(W)) continue;
          out[static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx)] = 1;
        }
      }
    }
  }
  return out;
}

}  // namespace

std::string artifact_kind_name(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::kSpatial: return "spatial";
    case ArtifactKind::kTemporal: return "temporal";
    case ArtifactKind::kBoth: return "both";
  }
  throw std::logic_error("bad artifact kind");
}

ArtifactKind artifact_kind_from_name(const std::string& name) {
  if (name == "spatial") return ArtifactKind::kSpatial;
  if (name == "temporal") return ArtifactKind::kTemporal;
  if (name == "both") return ArtifactKind::kBoth;
  throw std::invalid_argument("unknown artifact kind \"" + name + "\" (spatial, temporal, both)");
}

void Clip::validate() const {
  if (frames.size() < 2) {
    throw std::invalid_argument("clip " + clip_id + " needs at least 2 frames");
  }
  const Shape& shape = frames.front().shape();
  for (const Tensor& f : frames) {
    if (!f.defined() || f.ndim() != 3 || f.dim(0) != 3) {
      throw std::invalid_argument("clip " + clip_id + ": frames must be [3 x H x W]");
    }
    if (f.shape() != shape) throw std::invalid_argument("clip " + clip_id + ": frame size mismatch");
    for (double v : f.values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument("clip " + clip_id + ": pixel outside [0, 1]");
      }
    }
  }
  if (!fake && artifact_meta.has_value()) {
    throw std::invalid_argument("clip " + clip_id + ": real clip carries artifact metadata");
  }
  if (artifact_meta.has_value()) {
    const Tensor& region = artifact_meta->region;
    if (!region.defined() || region.ndim() != 2 || region.dim(0) != frames.front().dim(1) ||
        region.dim(1) != frames.front().dim(2)) {
      throw std::invalid_argument("clip " + clip_id + ": region mask must match frame size");
    }
  }
}

Clip generate_synthetic_clip(std::uint64_t seed, bool fake, ArtifactKind kind, std::size_t T,
                             std::size_t H, std::size_t W) {
  if (T < 2) throw std::invalid_argument("generate_synthetic_clip: need at least 2 frames");
  if (H < 16 || W < 16) throw std::invalid_argument("generate_synthetic_clip: frames below 16 x 16");

  const Scene s = draw_scene(seed, T, H, W);
  const bool want_spatial = fake && kind != ArtifactKind::kTemporal;
  const bool want_temporal = fake && kind != ArtifactKind::kSpatial;
  SpatialArtifact sa;
  TemporalArtifact ta;
  if (want_spatial) sa = draw_spatial(s, seed);
  if (want_temporal) ta = draw_temporal(seed, T);

  Clip clip;
  clip.clip_id = "clip" + std::to_string(seed) + "_" + (fake ? artifact_kind_name(kind) : "real");
  clip.fake = fake;
  std::vector<double> buf;
  for (std::size_t t = 0; t < T; ++t) {
    render_frame(s, t, want_spatial ? &sa : nullptr, want_temporal ? &ta : nullptr, buf);
    clip.frames.push_back(Tensor::from_data({3, H, W}, buf));
  }

  if (fake) {
    ArtifactMeta meta;
    meta.kind = kind;
    std::vector<char> region(H * W, 0);
    if (want_spatial) {
      std::vector<char> fp(H * W, 0);
      for (std::size_t t = 0; t < T; ++t) {
        mark_ellipse(fp, H, W, s.face_cx(t) + sa.ox, s.face_cy(t) + sa.oy, sa.rx, sa.ry, 0.6);
      }
      fp = dilate(fp, H, W, 3);
      for (std::size_t i = 0; i < fp.size(); ++i) region[i] |= fp[i];
    }
    if (want_temporal) {
      std::vector<char> fp(H * W, 0);
      mark_ellipse(fp, H, W, s.patch_cx, s.patch_cy, s.patch_r, s.patch_r, 1.5);
      for (std::size_t t = 0; t < T; ++t) {
        mark_ellipse(fp, H, W, s.patch_cx + ta.dx[t], s.patch_cy + ta.dy[t], s.patch_r, s.patch_r,
                     1.5);
      }
      fp = dilate(fp, H, W, 5);
      for (std::size_t i = 0; i < fp.size(); ++i) region[i] |= fp[i];
    }
    std::vector<double> rv(region.begin(), region.end());
    meta.region = Tensor::from_data({H, W}, std::move(rv));
    double flicker = 0.0;
    if (want_temporal) {
      for (double f : ta.factor) flicker += std::abs(f - s.patch_factor);
      flicker /= static_cast<double>(T);
    }
    meta.magnitude = want_spatial ? std::max(sa.amp, flicker) : flicker;
    clip.artifact_meta = std::move(meta);
  }
  clip.validate();
  return clip;
}

Clip load_frames(const std::string& directory) {
  namespace fs = std::filesystem;
  std::string clean = directory;
  while (clean.size() > 1 && (clean.back() == '/' || clean.back() == '\\')) clean.pop_back();
  const fs::path dir(clean);
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw std::runtime_error("load_frames: not a directory: " + directory);
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > 4 && name.compare(name.size() - 4, 4, ".png") == 0) names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("load_frames: no PNG frames in " + directory);

  Clip clip;
  clip.clip_id = dir.filename().string();
  for (const std::string& name : names) {
    Tensor frame = read_png_rgb((dir / name).string());
    if (!clip.frames.empty() && frame.shape() != clip.frames.front().shape()) {
      throw std::runtime_error("load_frames: frame size mismatch at " + (dir / name).string());
    }
    clip.frames.push_back(std::move(frame));
  }

  const fs::path label_path = dir / "label.txt";
  if (!fs::exists(label_path)) {
    throw std::runtime_error("load_frames: missing label file " + label_path.string());
  }
  const std::string label = trim(read_file(label_path.string()));
  if (label == "real") {
    clip.fake = false;
  } else if (label == "fake") {
    clip.fake = true;
  } else {
    throw std::runtime_error("load_frames: label file " + label_path.string() +
                             " must say real or fake, got \"" + label + "\"");
  }
  clip.validate();
  return clip;
}

namespace {

// Orthonormal 8-point DCT-II basis: c[k][n] = s(k) cos(pi (n + 1/2) k / 8).
struct DctBasis {
  double c[8][8];
  DctBasis() {
    for (int k = 0; k < 8; ++k) {
      const double scale = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) {
        c[k][n] = scale * std::cos(kPi * (static_cast<double>(n) + 0.5) * static_cast<double>(k) / 8.0);
      }
    }
  }
};

const DctBasis& dct_basis() {
  static const DctBasis basis;
  return basis;
}

}  // namespace

Tensor degrade_compression(const Tensor& frame, std::size_t q) {
  if (q < 1) throw std::invalid_argument("degrade_compression: q must be at least 1");
  if (!frame.defined() || (frame.ndim() != 2 && frame.ndim() != 3)) {
    throw std::invalid_argument("degrade_compression: frame must be [H x W] or [C x H x W]");
  }
  const bool chans = frame.ndim() == 3;
  const std::size_t C = chans ? frame.dim(0) : 1;
  const std::size_t H = frame.dim(chans ? 1 : 0);
  const std::size_t W = frame.dim(chans ? 2 : 1);
  const double step = static_cast<double>(q) - 1.0;
  const std::size_t Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;
  const auto& B = dct_basis().c;
  const auto& in = frame.values();
  std::vector<double> out(in.size());
  std::vector<double> plane(Hp * Wp);
  double tmp[8][8], coef[8][8];

  for (std::size_t c = 0; c < C; ++c) {
    // 255 scale, edges replicated out to block multiples
    for (std::size_t y = 0; y < Hp; ++y) {
      const std::size_t sy = std::min(y, H - 1);
      for (std::size_t x = 0; x < Wp; ++x) {
        const std::size_t sx = std::min(x, W - 1);
        plane[y * Wp + x] = in[(c * H + sy) * W + sx] * 255.0;
      }
    }
    for (std::size_t by = 0; by < Hp; by += 8) {
      for (std::size_t bx = 0; bx < Wp; bx += 8) {
        double* base = plane.data() + by * Wp + bx;
        for (int k = 0; k < 8; ++k) {
          for (int m = 0; m < 8; ++m) {
            double acc = 0.0;
            for (int n = 0; n < 8; ++n) acc += B[k][n] * base[n * Wp + m];
            tmp[k][m] = acc;
          }
        }
        for (int k = 0; k < 8; ++k) {
          for (int l = 0; l < 8; ++l) {
            double acc = 0.0;
            for (int m = 0; m < 8; ++m) acc += tmp[k][m] * B[l][m];
            coef[k][l] = acc;
          }
        }
        if (step > 0.0) {
          for (int k = 0; k < 8; ++k) {
            for (int l = 0; l < 8; ++l) {
              if (k == 0 && l == 0) continue;  // DC carries the block mean
              coef[k][l] = step * std::round(coef[k][l] / step);
            }
          }
        }
        for (int n = 0; n < 8; ++n) {
          for (int l = 0; l < 8; ++l) {
            double acc = 0.0;
            for (int k = 0; k < 8; ++k) acc += B[k][n] * coef[k][l];
            tmp[n][l] = acc;
          }
        }
        for (int n = 0; n < 8; ++n) {
          for (int m = 0; m < 8; ++m) {
            double acc = 0.0;
            for (int l = 0; l < 8; ++l) acc += tmp[n][l] * B[l][m];
            base[n * Wp + m] = acc;
          }
        }
      }
    }
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        out[(c * H + y) * W + x] = std::clamp(plane[y * Wp + x] / 255.0, 0.0, 1.0);
      }
    }
  }
  return Tensor::from_data(frame.shape(), std::move(out));
}

void SplitSpec::validate() const {
  if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0)) {
    throw std::invalid_argument("split fractions must be positive");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
}

DatasetSplits split_dataset(const std::vector<Clip>& clips, const SplitSpec& spec) {
  spec.validate();
  if (clips.empty()) throw std::invalid_argument("split_dataset: no clips");

  DatasetSplits out;
  const double fracs[3] = {spec.train, spec.val, spec.test};

  auto apportion = [&](std::size_t n) {
    std::array<std::size_t, 3> counts{};
    double rem[3];
    std::size_t used = 0;
    for (int i = 0; i < 3; ++i) {
      const double exact = fracs[i] * static_cast<double>(n);
      counts[i] = static_cast<std::size_t>(std::floor(exact));
      rem[i] = exact - std::floor(exact);
      used += counts[i];
    }
    for (std::size_t left = n - used; left > 0; --left) {
      int pick = 0;
      for (int i = 1; i < 3; ++i) {
        if (rem[i] > rem[pick]) pick = i;
      }
      ++counts[pick];
      rem[pick] = -1.0;
    }
    return counts;
  };

  auto assign_group = [&](std::vector<std::size_t> idx, std::uint64_t stream) {
    Rng rng(mix64(spec.seed, stream));
    rng.shuffle(idx);
    const auto counts = apportion(idx.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) out.train.push_back(clips[idx[pos++]]);
    for (std::size_t i = 0; i < counts[1]; ++i) out.val.push_back(clips[idx[pos++]]);
    for (std::size_t i = 0; i < counts[2]; ++i) out.test.push_back(clips[idx[pos++]]);
  };

  if (spec.stratify) {
    std::vector<std::size_t> real_idx, fake_idx;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      (clips[i].fake ? fake_idx : real_idx).push_back(i);
    }
    assign_group(std::move(real_idx), 1);
    assign_group(std::move(fake_idx), 2);
  } else {
    std::vector<std::size_t> idx(clips.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    assign_group(std::move(idx), 0);
  }
  return out;
}

}  // namespace masdt
