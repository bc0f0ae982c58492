#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masdt/tensor.hpp"

namespace masdt {

// Dense displacement field in pixels. warp(f_t1, field) samples f_t1 at
// x + (u, v) and should approximate f_t.
struct FlowField {
  Tensor u;  // [H x W]
  Tensor v;  // [H x W]
};

struct FlowParams {
  double lambda = 0.1;  // smoothness weight, enters the solver as alpha^2
  std::size_t iterations = 100;
  std::size_t levels = 3;
  double downscale = 0.5;
  std::size_t warps_per_level = 3;
  double max_displacement = 4.0;  // clamp D for the 3-channel encoding

  void validate() const;
};

struct FlowDiagnostics {
  // Mean |f_t - warp(f_t1)| after solving each level, coarse to fine.
  std::vector<double> level_residuals;
};

// Coarse-to-fine Horn-Schunck. Frames are grayscale [H x W] in [0,1].
FlowField estimate_flow(const Tensor& f_t, const Tensor& f_t1, const FlowParams& params,
                        FlowDiagnostics* diag = nullptr);

// channel 0: u clamped to [-D, D] mapped to [0,1]; channel 1: v likewise;
// channel 2: clamped magnitude / D.
Tensor flow_to_image(const FlowField& field, double max_displacement);

// Bilinear backward warp with border clamp. frame is [H x W] or [C x H x W].
Tensor warp(const Tensor& frame, const FlowField& field);

// luminance 0.299 R + 0.587 G + 0.114 B
Tensor grayscale(const Tensor& rgb);

// Cache record: magic "MFLW", u16 version, u32 H, u32 W (little-endian), then
// H*W float32 u and H*W float32 v, row-major.
void save_flow(const FlowField& field, const std::string& path);
FlowField load_flow(const std::string& path);

}  // namespace masdt
