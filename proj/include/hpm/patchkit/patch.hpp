#pragma once

#include <cstddef>
#include <vector>

#include "hpm/diffmath/tensor.hpp"

namespace hpm::patch {

using diff::Tensor;

/// Extents of a T x H x W x C signal and its space-time patch size.
struct Geometry {
  std::size_t frames = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t patch = 8;           // spatial patch side P
  std::size_t temporal_patch = 1;  // frames per token t

  /// Throws GeometryError listing the extents when divisibility fails.
  void validate() const;

  std::size_t grid_t() const { return frames / temporal_patch; }
  std::size_t grid_h() const { return height / patch; }
  std::size_t grid_w() const { return width / patch; }
  std::size_t patches_per_slice() const { return grid_h() * grid_w(); }
  std::size_t num_patches() const { return grid_t() * patches_per_slice(); }
  std::size_t token_dim() const { return temporal_patch * patch * patch * channels; }
  std::size_t pixel_count() const { return frames * height * width * channels; }

  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Signal values indexed [frame, row, col, channel], nominally in [0, 1].
struct VisualTensor {
  Geometry geometry;
  std::vector<double> data;

  VisualTensor() = default;
  explicit VisualTensor(const Geometry& g) : geometry(g), data(g.pixel_count(), 0.0) {}

  std::size_t index(std::size_t f, std::size_t r, std::size_t c, std::size_t ch) const {
    return ((f * geometry.height + r) * geometry.width + c) * geometry.channels + ch;
  }
  double& at(std::size_t f, std::size_t r, std::size_t c, std::size_t ch) {
    return data[index(f, r, c, ch)];
  }
  double at(std::size_t f, std::size_t r, std::size_t c, std::size_t ch) const {
    return data[index(f, r, c, ch)];
  }
};

/// N tokens of length t*P*P*C, ordered temporal group, then patch row, then patch column.
struct PatchSequence {
  Geometry geometry;
  Tensor tokens;
};

PatchSequence patchify(const VisualTensor& v);
VisualTensor unpatchify(const PatchSequence& p);

enum class TargetMode { raw_pixels, normalized_pixels, ema_features };

struct TargetConfig {
  TargetMode mode = TargetMode::normalized_pixels;
  double eps = 1e-6;

  friend bool operator==(const TargetConfig&, const TargetConfig&) = default;
};

/// Reconstruction targets. normalized_pixels standardizes each token by its own
/// mean and population variance, dividing by sqrt(max(var, eps)) so constant
/// tokens map to zero. ema_features requires teacher_features and returns
/// their l2-normalized rows.
Tensor make_targets(const PatchSequence& p, const TargetConfig& cfg,
                    const Tensor* teacher_features = nullptr);

/// Fixed sine/cosine table [N x dim], factored over (temporal group, row,
/// column) for clips and (row, column) for single-slice inputs. Each axis takes
/// dim / axes columns, which must be even.
Tensor sincos_embed(const Geometry& g, std::size_t dim);

/// Which temporal slice (token group) a patch index belongs to.
inline std::size_t slice_of(const Geometry& g, std::size_t patch_index) {
  return patch_index / g.patches_per_slice();
}

}  // namespace hpm::patch
