#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "masdt/tensor.hpp"

namespace masdt {

enum class ArtifactKind { kSpatial, kTemporal, kBoth };

std::string artifact_kind_name(ArtifactKind kind);
ArtifactKind artifact_kind_from_name(const std::string& name);

struct ArtifactMeta {
  ArtifactKind kind = ArtifactKind::kSpatial;
  Tensor region;           // [H x W], 1 where the clip was tampered with
  double magnitude = 0.0;  // injection strength, kind-specific units
};

struct Clip {
  std::string clip_id;
  std::vector<Tensor> frames;  // [3 x H x W], values in [0, 1]
  bool fake = false;
  std::optional<ArtifactMeta> artifact_meta;

  void validate() const;
};

// Upper bound on the face's per-axis translation between frames, px.
inline constexpr double kMaxMotionStep = 0.9;

// Procedural clip: textured background, drifting soft-edged face blob with
// eye and mouth marks, and a static shading patch off the face's path. Every
// clip, real or fake, carries that shading patch so a flickering one is
// nothing new to a single-frame observer. Fakes add, per kind:
//   spatial   - a plaid-textured patch riding the face, hard-seamed
//   temporal  - the shading patch re-rolls its gain each frame and jitters
//   both      - both of the above
// The paired real clip (same seed, fake=false) is pixel-identical outside
// the artifact region.
Clip generate_synthetic_clip(std::uint64_t seed, bool fake, ArtifactKind kind, std::size_t T,
                             std::size_t H, std::size_t W);

// Reads a directory of PNG frames (lexicographic order) plus a `label.txt`
// sidecar saying `real` or `fake`. clip_id is the directory's name.
Clip load_frames(const std::string& directory);

// JPEG-ish stressor: 8x8 block DCT on the 255 scale, AC coefficients snapped
// to a grid that widens with q (q=1 leaves them alone), DC kept exactly, so
// q -> infinity flattens each block to its mean. Accepts [H x W] or
// [C x H x W]; sizes that are not multiples of 8 are edge-padded for the
// transform.
Tensor degrade_compression(const Tensor& frame, std::size_t q);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
  bool stratify = true;

  void validate() const;
};

struct DatasetSplits {
  std::vector<Clip> train, val, test;
};

// Deterministic shuffle then largest-remainder apportionment, per label when
// stratified. Splits are disjoint and exhaustive.
DatasetSplits split_dataset(const std::vector<Clip>& clips, const SplitSpec& spec);

}  // namespace masdt
