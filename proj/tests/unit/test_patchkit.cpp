#include <cmath>
#include <set>

#include "doctest.h"
#include "hpm/error.hpp"
#include "hpm/patchkit/patch.hpp"
#include "hpm/rng.hpp"

using namespace hpm;
using namespace hpm::patch;

namespace {

VisualTensor random_signal(const Geometry& g, Rng& rng) {
  VisualTensor v(g);
  for (double& x : v.data) x = rng.uniform();
  return v;
}

}  // namespace

TEST_CASE("patch counts") {
  Geometry video{16, 224, 224, 3, 16, 2};
  CHECK(video.num_patches() == 1568);
  CHECK(video.grid_t() == 8);
  Geometry image{1, 224, 224, 3, 16, 1};
  CHECK(image.num_patches() == 196);
  Geometry small{1, 32, 32, 3, 8, 1};
  CHECK(small.num_patches() == 16);
  CHECK(small.token_dim() == 192);
}

TEST_CASE("geometry errors list extents") {
  Geometry bad{1, 30, 32, 3, 8, 1};
  try {
    bad.validate();
    FAIL("expected GeometryError");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("30") != std::string::npos);
  }
  CHECK_THROWS_AS((Geometry{3, 16, 16, 1, 8, 2}.validate()), GeometryError);
  CHECK_THROWS_AS((Geometry{1, 16, 16, 0, 8, 1}.validate()), GeometryError);
}

TEST_CASE("patchify round trip") {
  Rng rng(1);
  for (const Geometry& g : {Geometry{1, 32, 32, 3, 8, 1}, Geometry{4, 16, 8, 2, 4, 2},
                            Geometry{1, 8, 16, 3, 4, 1}}) {
    const VisualTensor v = random_signal(g, rng);
    const PatchSequence p = patchify(v);
    CHECK(p.tokens.rows() == g.num_patches());
    CHECK(p.tokens.cols() == g.token_dim());
    CHECK(unpatchify(p).data == v.data);
    CHECK(patchify(unpatchify(p)).tokens == p.tokens);
  }
  Geometry g{1, 8, 8, 3, 4, 1};
  PatchSequence zero{g, Tensor({g.num_patches(), g.token_dim()})};
  for (double x : unpatchify(zero).data) CHECK(x == 0.0);
  PatchSequence wrong{g, Tensor({3, g.token_dim()})};
  CHECK_THROWS_AS(unpatchify(wrong), GeometryError);
}

TEST_CASE("single patch keeps pixel order") {
  Geometry g{2, 4, 4, 3, 4, 2};
  Rng rng(2);
  const VisualTensor v = random_signal(g, rng);
  const PatchSequence p = patchify(v);
  REQUIRE(p.tokens.rows() == 1);
  for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(p.tokens[i] == v.data[i]);
}

TEST_CASE("token order is a function of geometry") {
  Geometry g{1, 16, 16, 1, 8, 1};
  VisualTensor v(g);
  v.at(0, 0, 9, 0) = 1.0;  // patch row 0, col 1
  v.at(0, 12, 3, 0) = 2.0;  // patch row 1, col 0
  const PatchSequence p = patchify(v);
  CHECK(p.tokens.at(1, 1) == 1.0);
  CHECK(p.tokens.at(2, 4 * 8 + 3) == 2.0);
  VisualTensor w = v;
  std::swap(w.at(0, 0, 9, 0), w.at(0, 7, 15, 0));
  const PatchSequence q = patchify(w);
  for (std::size_t i = 0; i < p.tokens.rows(); ++i)
    if (i != 1)
      for (std::size_t c = 0; c < p.tokens.cols(); ++c) CHECK(q.tokens.at(i, c) == p.tokens.at(i, c));
}

TEST_CASE("reconstruction targets") {
  Geometry g{1, 8, 8, 3, 4, 1};
  Rng rng(3);
  VisualTensor v = random_signal(g, rng);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) v.at(0, r, c, ch) = 0.4;
  const PatchSequence p = patchify(v);

  const Tensor raw = make_targets(p, {TargetMode::raw_pixels, 1e-6});
  CHECK(raw == p.tokens);

  const Tensor norm = make_targets(p, {TargetMode::normalized_pixels, 1e-6});
  for (double x : norm.row(0)) CHECK(x == 0.0);
  for (std::size_t i = 1; i < norm.rows(); ++i) {
    double mu = 0.0, sq = 0.0;
    for (double x : norm.row(i)) mu += x;
    mu /= static_cast<double>(norm.cols());
    for (double x : norm.row(i)) sq += (x - mu) * (x - mu);
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(sq / static_cast<double>(norm.cols()) - 1.0) < 1e-6);
  }

  const Tensor feats = Tensor::matrix(4, 2, {3, 4, 1, 0, 0, 2, 1, 1});
  const Tensor ema = make_targets(p, {TargetMode::ema_features, 1e-6}, &feats);
  CHECK(ema[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(ema[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(make_targets(p, {TargetMode::ema_features, 1e-6}), ContractError);
}

TEST_CASE("sine cosine table") {
  Geometry g{4, 16, 16, 3, 4, 2};
  const Tensor a = sincos_embed(g, 24);
  CHECK(a.rows() == g.num_patches());
  CHECK(a.cols() == 24);
  CHECK(a == sincos_embed(g, 24));
  for (double x : a.values()) {
    CHECK(x >= -1.0);
    CHECK(x <= 1.0);
  }
  std::set<std::vector<double>> rows;
  for (std::size_t i = 0; i < a.rows(); ++i) rows.emplace(a.row(i).begin(), a.row(i).end());
  CHECK(rows.size() == a.rows());
  const Tensor img = sincos_embed(Geometry{1, 32, 32, 3, 8, 1}, 8);
  CHECK(img.rows() == 16);
  CHECK_THROWS_AS(sincos_embed(g, 20), ConfigError);
  CHECK_THROWS_AS(sincos_embed(Geometry{1, 32, 32, 3, 8, 1}, 6), ConfigError);
}

TEST_CASE("slice index") {
  Geometry g{4, 16, 16, 3, 8, 1};
  CHECK(slice_of(g, 3) == 0);
  CHECK(slice_of(g, 4) == 1);
  CHECK(slice_of(g, 15) == 3);
}
