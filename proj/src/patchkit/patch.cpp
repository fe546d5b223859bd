#include "hpm/patchkit/patch.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hpm/error.hpp"

namespace hpm::patch {

void Geometry::validate() const {
  const bool positive = frames && height && width && channels && patch && temporal_patch;
  if (!positive || frames % temporal_patch || height % patch || width % patch)
    throw GeometryError("geometry T=" + std::to_string(frames) + " H=" + std::to_string(height) +
                        " W=" + std::to_string(width) + " C=" + std::to_string(channels) +
                        " P=" + std::to_string(patch) + " t=" + std::to_string(temporal_patch) +
                        " requires T % t == 0 and H, W % P == 0");
}

namespace {

// Calls fn(token, offset_in_token, pixel_index) for every pixel.
template <class Fn>
void for_each_patch_pixel(const Geometry& g, Fn&& fn) {
  const std::size_t P = g.patch, C = g.channels, t = g.temporal_patch;
  std::size_t token = 0;
  for (std::size_t gt = 0; gt < g.grid_t(); ++gt)
    for (std::size_t gy = 0; gy < g.grid_h(); ++gy)
      for (std::size_t gx = 0; gx < g.grid_w(); ++gx, ++token) {
        std::size_t off = 0;
        for (std::size_t ft = 0; ft < t; ++ft)
          for (std::size_t py = 0; py < P; ++py)
            for (std::size_t px = 0; px < P; ++px)
              for (std::size_t c = 0; c < C; ++c, ++off) {
                const std::size_t f = gt * t + ft, r = gy * P + py, col = gx * P + px;
                fn(token, off, ((f * g.height + r) * g.width + col) * C + c);
              }
      }
}

}  // namespace

PatchSequence patchify(const VisualTensor& v) {
  const Geometry& g = v.geometry;
  g.validate();
  if (v.data.size() != g.pixel_count())
    throw GeometryError("patchify: tensor holds " + std::to_string(v.data.size()) +
                        " values, geometry expects " + std::to_string(g.pixel_count()));
  PatchSequence out{g, Tensor({g.num_patches(), g.token_dim()})};
  const std::size_t D = g.token_dim();
  for_each_patch_pixel(g, [&](std::size_t tok, std::size_t off, std::size_t px) {
    out.tokens[tok * D + off] = v.data[px];
  });
  return out;
}

VisualTensor unpatchify(const PatchSequence& p) {
  const Geometry& g = p.geometry;
  g.validate();
  if (p.tokens.rank() != 2 || p.tokens.rows() != g.num_patches() ||
      p.tokens.cols() != g.token_dim())
    throw GeometryError("unpatchify: tokens " + diff::shape_str(p.tokens.shape()) +
                        " do not match geometry [" + std::to_string(g.num_patches()) + "x" +
                        std::to_string(g.token_dim()) + "]");
  VisualTensor v(g);
  const std::size_t D = g.token_dim();
  for_each_patch_pixel(g, [&](std::size_t tok, std::size_t off, std::size_t px) {
    v.data[px] = p.tokens[tok * D + off];
  });
  return v;
}

Tensor make_targets(const PatchSequence& p, const TargetConfig& cfg,
                    const Tensor* teacher_features) {
  switch (cfg.mode) {
    case TargetMode::raw_pixels:
      return p.tokens;
    case TargetMode::normalized_pixels: {
      Tensor out = p.tokens;
      const std::size_t d = out.cols();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        if (std::all_of(row.begin(), row.end(), [&](double x) { return x == row[0]; })) {
          std::fill(row.begin(), row.end(), 0.0);
          continue;
        }
        double mu = 0.0;
        for (double x : row) mu += x;
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (double x : row) var += (x - mu) * (x - mu);
        var /= static_cast<double>(d);
        const double denom = std::sqrt(std::max(var, cfg.eps));
        for (double& x : row) x = (x - mu) / denom;
      }
      return out;
    }
    case TargetMode::ema_features: {
      if (teacher_features == nullptr)
        throw ContractError("make_targets: ema_features mode requires teacher features");
      if (teacher_features->rows() != p.tokens.rows())
        throw DimensionError("make_targets: teacher features " +
                             diff::shape_str(teacher_features->shape()) + " for " +
                             std::to_string(p.tokens.rows()) + " patches");
      Tensor out = *teacher_features;
      const double eps = cfg.eps;
      for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        double n2 = 0.0;
        for (double x : row) n2 += x * x;
        const double denom = std::max(std::sqrt(n2), eps);
        for (double& x : row) x /= denom;
      }
      return out;
    }
  }
  throw ContractError("make_targets: unknown target mode");
}

Tensor sincos_embed(const Geometry& g, std::size_t dim) {
  g.validate();
  const std::size_t axes = g.grid_t() > 1 ? 3 : 2;
  if (dim == 0 || dim % axes != 0 || (dim / axes) % 2 != 0)
    throw ConfigError("sincos_embed: dim " + std::to_string(dim) + " must split into " +
                      std::to_string(axes) + " even per-axis blocks");
  const std::size_t per_axis = dim / axes, freqs = per_axis / 2;
  Tensor table({g.num_patches(), dim});
  std::size_t n = 0;
  for (std::size_t gt = 0; gt < g.grid_t(); ++gt)
    for (std::size_t gy = 0; gy < g.grid_h(); ++gy)
      for (std::size_t gx = 0; gx < g.grid_w(); ++gx, ++n) {
        const std::size_t coords3[3] = {gt, gy, gx};
        const std::size_t* coords = axes == 3 ? coords3 : coords3 + 1;
        for (std::size_t a = 0; a < axes; ++a) {
          const double pos = static_cast<double>(coords[a]);
          for (std::size_t k = 0; k < freqs; ++k) {
            const double omega =
                1.0 / std::pow(10000.0, static_cast<double>(k) / static_cast<double>(freqs));
            table.at(n, a * per_axis + k) = std::sin(pos * omega);
            table.at(n, a * per_axis + freqs + k) = std::cos(pos * omega);
          }
        }
      }
  return table;
}

}  // namespace hpm::patch
