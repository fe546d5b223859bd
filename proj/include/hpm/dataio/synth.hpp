#pragma once

#include <cstdint>
#include <vector>

#include "hpm/patchkit/patch.hpp"
#include "hpm/rng.hpp"

namespace hpm::data {

enum class ShapeFamily { disc, box, bar };

/// Generator settings for textured-foreground images (or clips).
///
/// Each class fixes a shape family (class % 3), a color tint, and a stripe
/// orientation and frequency. Backgrounds are a brightness level plus
/// bilinearly interpolated low-frequency shading shared by all channels; the
/// foreground adds the class tint and a stripe texture on top, both scaled by
/// texture_amplitude. With both amplitudes zero the image is constant.
struct SynthSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t frames = 1;
  std::size_t classes = 6;
  double texture_amplitude = 0.3;
  double noise_amplitude = 0.25;
  std::uint64_t seed = 7;
  /// Per-frame translation bound (pixels) for clips.
  double max_speed = 1.5;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

struct SampleRecord {
  patch::VisualTensor visual;
  std::size_t label = 0;
  /// Per patch: 1 when any pixel of the patch lies inside the foreground.
  std::vector<std::uint8_t> fg_mask;
  /// Per pixel position (frame, row, col): 1 inside the foreground.
  std::vector<std::uint8_t> fg_pixels;
};

ShapeFamily family_of(std::size_t label);

/// One sample of class `label` drawn from rng. The geometry supplies patch
/// sizes for fg_mask; its extents must match the spec.
SampleRecord synth_sample(const SynthSpec& spec, const patch::Geometry& geometry, Rng& rng,
                          std::size_t label);

/// Samples first..first+count-1: sample i uses a stream derived from (seed, i)
/// and label i % classes.
std::vector<SampleRecord> synth_dataset(const SynthSpec& spec, const patch::Geometry& geometry,
                                        std::size_t count, std::size_t first = 0);

}  // namespace hpm::data
