#include "hpm/dataio/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hpm/error.hpp"

namespace hpm::data {

namespace {

constexpr std::size_t kNoiseGrid = 2;

struct ClassStyle {
  double angle;
  double frequency;  // cycles per pixel
  double tint[3];    // sums to zero, so it is orthogonal to brightness
};

ClassStyle style_of(std::size_t label, std::size_t classes) {
  ClassStyle s{};
  const double pi = std::numbers::pi;
  const double turn = static_cast<double>(label) / static_cast<double>(std::max<std::size_t>(classes, 1));
  s.angle = pi * turn;
  s.frequency = (label % 2 == 0) ? 0.30 : 0.42;
  for (std::size_t c = 0; c < 3; ++c)
    s.tint[c] = 0.15 * std::cos(2.0 * pi * turn + 2.0 * pi * static_cast<double>(c) / 3.0);
  return s;
}

double lerp(double a, double b, double t) { return a + (b - a) * t; }

}  // namespace

ShapeFamily family_of(std::size_t label) { return static_cast<ShapeFamily>(label % 3); }

SampleRecord synth_sample(const SynthSpec& spec, const patch::Geometry& g, Rng& rng,
                          std::size_t label) {
  if (label >= spec.classes)
    throw ContractError("synth_sample: class " + std::to_string(label) + " >= class count " +
                        std::to_string(spec.classes));
  if (g.height != spec.height || g.width != spec.width || g.channels != spec.channels ||
      g.frames != spec.frames)
    throw GeometryError("synth_sample: geometry extents do not match the generator spec");
  g.validate();

  const std::size_t H = spec.height, W = spec.width, T = spec.frames, C = spec.channels;
  const double area = static_cast<double>(H * W);
  const ClassStyle style = style_of(label, spec.classes);

  // Foreground extent, sized to 15-33% of the image.
  const double fraction = 0.15 + 0.18 * rng.uniform();
  const ShapeFamily family = family_of(label);
  double half_w = 0.0, half_h = 0.0, radius = 0.0;
  switch (family) {
    case ShapeFamily::disc:
      radius = std::sqrt(fraction * area / std::numbers::pi);
      half_w = half_h = radius;
      break;
    case ShapeFamily::box:
      half_w = half_h = 0.5 * std::sqrt(fraction * area);
      break;
    case ShapeFamily::bar: {
      const bool vertical = rng.uniform() < 0.5;
      const double length = 0.85 * static_cast<double>(vertical ? H : W);
      const double thick = fraction * area / length;
      half_w = 0.5 * (vertical ? thick : length);
      half_h = 0.5 * (vertical ? length : thick);
      break;
    }
  }

  // Constant-velocity path that keeps the shape inside every frame.
  const double speed = T > 1 ? spec.max_speed : 0.0;
  const double vx = speed * (2.0 * rng.uniform() - 1.0);
  const double vy = speed * (2.0 * rng.uniform() - 1.0);
  const double span = static_cast<double>(T - 1);
  auto pick_start = [&](double extent, double half, double v) {
    const double lo = half + std::max(0.0, -v * span);
    const double hi = extent - half - std::max(0.0, v * span);
    return hi > lo ? lo + (hi - lo) * rng.uniform() : 0.5 * extent;
  };
  const double cx0 = pick_start(static_cast<double>(W), half_w, vx);
  const double cy0 = pick_start(static_cast<double>(H), half_h, vy);
  const double phase = 2.0 * std::numbers::pi * rng.uniform();

  // Background: level + coarse noise grid, bilinear, shared by all channels.
  const double level = 0.35 + 0.3 * rng.uniform();
  std::vector<double> grid(kNoiseGrid * kNoiseGrid);
  for (double& v : grid) v = spec.noise_amplitude * (2.0 * rng.uniform() - 1.0);

  SampleRecord rec;
  rec.label = label;
  rec.visual = patch::VisualTensor(g);
  rec.fg_pixels.assign(T * H * W, 0);
  const double ca = std::cos(style.angle), sa = std::sin(style.angle);
  for (std::size_t f = 0; f < T; ++f) {
    const double cx = cx0 + vx * static_cast<double>(f);
    const double cy = cy0 + vy * static_cast<double>(f);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
        const double dx = x - cx, dy = y - cy;
        bool inside = false;
        if (family == ShapeFamily::disc)
          inside = dx * dx + dy * dy <= radius * radius;
        else
          inside = std::abs(dx) <= half_w && std::abs(dy) <= half_h;
        rec.fg_pixels[(f * H + r) * W + c] = inside;

        const double gx = x / static_cast<double>(W) * (kNoiseGrid - 1);
        const double gy = y / static_cast<double>(H) * (kNoiseGrid - 1);
        const std::size_t ix = std::min<std::size_t>(static_cast<std::size_t>(gx), kNoiseGrid - 2);
        const std::size_t iy = std::min<std::size_t>(static_cast<std::size_t>(gy), kNoiseGrid - 2);
        const double tx = gx - static_cast<double>(ix), ty = gy - static_cast<double>(iy);
        const double stripe =
            std::sin(2.0 * std::numbers::pi * style.frequency * (dx * ca + dy * sa) + phase);
        const double* gp = grid.data();
        const double noise =
            lerp(lerp(gp[iy * kNoiseGrid + ix], gp[iy * kNoiseGrid + ix + 1], tx),
                 lerp(gp[(iy + 1) * kNoiseGrid + ix], gp[(iy + 1) * kNoiseGrid + ix + 1], tx), ty);
        for (std::size_t ch = 0; ch < C; ++ch) {
          double v = level + noise;
          if (inside) v += spec.texture_amplitude * (style.tint[ch % 3] + 0.6 * stripe);
          rec.visual.at(f, r, c, ch) = std::clamp(v, 0.0, 1.0);
        }
      }
  }

  rec.fg_mask.assign(g.num_patches(), 0);
  std::size_t token = 0;
  for (std::size_t gt = 0; gt < g.grid_t(); ++gt)
    for (std::size_t gy = 0; gy < g.grid_h(); ++gy)
      for (std::size_t gx = 0; gx < g.grid_w(); ++gx, ++token) {
        bool any = false;
        for (std::size_t ft = 0; ft < g.temporal_patch && !any; ++ft)
          for (std::size_t py = 0; py < g.patch && !any; ++py)
            for (std::size_t px = 0; px < g.patch && !any; ++px) {
              const std::size_t f = gt * g.temporal_patch + ft;
              any = rec.fg_pixels[(f * H + gy * g.patch + py) * W + gx * g.patch + px] != 0;
            }
        rec.fg_mask[token] = any;
      }
  return rec;
}

std::vector<SampleRecord> synth_dataset(const SynthSpec& spec, const patch::Geometry& geometry,
                                        std::size_t count, std::size_t first) {
  std::vector<SampleRecord> out;
  out.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) {
    Rng rng = Rng::derive(spec.seed, i);
    out.push_back(synth_sample(spec, geometry, rng, i % spec.classes));
  }
  return out;
}

}  // namespace hpm::data
