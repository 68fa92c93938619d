#include "rangedam/projection.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "rangedam/error.hpp"

namespace rangedam::projection {
namespace {

PointCloud with_ring(std::vector<Point> pts, std::vector<std::uint16_t> ring) {
  PointCloud c;
  c.points = std::move(pts);
  c.ring = std::move(ring);
  return c;
}

TEST(Azimuth, Quadrants) {
  EXPECT_EQ(compute_azimuth(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(compute_azimuth(1, 1), 45.0);
  EXPECT_DOUBLE_EQ(compute_azimuth(-1, 0), 180.0);
  EXPECT_DOUBLE_EQ(compute_azimuth(0, -1), 270.0);
  EXPECT_DOUBLE_EQ(compute_azimuth(0, 1), 90.0);
  EXPECT_DOUBLE_EQ(compute_azimuth(-1, -1), 225.0);
  EXPECT_THROW(compute_azimuth(0, 0), DegenerateError);
}

TEST(Azimuth, RangeAndScaleInvariance) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> coord(-100.0, 100.0), k(1e-3, 1e3);
  for (int i = 0; i < 10000; ++i) {
    const double x = coord(rng), y = coord(rng), s = k(rng);
    const double t = compute_azimuth(x, y);
    EXPECT_GE(t, 0.0);
    EXPECT_LT(t, 360.0);
    // Exact when the scaled inputs are exact; otherwise only the rounding of
    // s*x and s*y remains.
    EXPECT_EQ(t, compute_azimuth(std::ldexp(x, i % 80 - 40), std::ldexp(y, i % 80 - 40)));
    EXPECT_NEAR(t, compute_azimuth(s * x, s * y), 1e-12) << x << ", " << y << " * " << s;
    EXPECT_NEAR(t, std::fmod(std::atan2(y, x) * 180.0 / M_PI + 360.0, 360.0), 1e-9);
  }
  // Just below the +x axis: the fold must not produce 360.
  EXPECT_LT(compute_azimuth(1.0, -1e-300), 360.0);
}

TEST(ScanUnfold, Columns) {
  EXPECT_EQ(azimuth_to_column(0.0, 2048), 0u);
  EXPECT_EQ(azimuth_to_column(90.0, 2048), 512u);
  EXPECT_EQ(azimuth_to_column(359.999, 2048), 2047u);
  EXPECT_EQ(azimuth_to_column(360.0, 2048), 2047u);
  EXPECT_EQ(azimuth_to_column(180.0, 1), 0u);
}

TEST(ScanUnfold, RowIsRing) {
  const auto uv = scan_unfold(with_ring({{5, 0, 0, 0}, {0, 5, 0, 0}}, {7, 2}), 2048);
  EXPECT_EQ(uv[0], (PixelCoord{0, 7}));
  EXPECT_EQ(uv[1], (PixelCoord{512, 2}));
}

TEST(ScanUnfold, NeedsRing) {
  PointCloud c;
  c.points = {{1, 0, 0, 0}};
  EXPECT_THROW(scan_unfold(c, 16), PreconditionError);
}

TEST(ScanUnfold, PropertiesOnRandomClouds) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint32_t w = 1 + static_cast<std::uint32_t>(rng() % 4096), h = 1 + static_cast<std::uint32_t>(rng() % 128);
    const PointCloud cloud = fixtures::random_cloud(200, h, rng);
    const auto uv = scan_unfold(cloud, w);
    ASSERT_EQ(uv.size(), cloud.size());
    for (std::size_t i = 0; i < uv.size(); ++i) {
      EXPECT_LT(uv[i].u, w);
      EXPECT_EQ(uv[i].v, (*cloud.ring)[i]);
    }
  }
}

TEST(Rasterize, NearestWins) {
  const PointCloud cloud = with_ring({{5, 0, 0, 0.1f}, {3, 0, 0, 0.9f}}, {0, 0});
  const std::vector<PixelCoord> uv{{0, 0}, {0, 0}};
  const RangeImage img = rasterize(cloud, uv, 1, 2);
  EXPECT_TRUE(img.is_valid(0, 0));
  EXPECT_EQ(img.at(3, 0, 0), 3.0f);
  EXPECT_EQ(img.at(4, 0, 0), 0.9f);
  // The LUT is point -> pixel, losers included.
  EXPECT_EQ(img.lut[0], (PixelCoord{0, 0}));
  EXPECT_EQ(img.lut[1], (PixelCoord{0, 0}));
  EXPECT_FALSE(img.is_valid(0, 1));
  for (std::size_t c = 0; c < kInputChannels; ++c) EXPECT_EQ(img.at(c, 0, 1), kInvalidFill);
}

TEST(Rasterize, ThreeFourFive) {
  const PointCloud cloud = with_ring({{3, 4, 0, 0.2f}}, {0});
  const RangeImage img = rasterize(cloud, scan_unfold(cloud, 8), 1, 8);
  const auto px = img.lut[0];
  EXPECT_EQ(img.at(3, px.v, px.u), 5.0f);
  EXPECT_EQ(img.at(4, px.v, px.u), 0.2f);
}

TEST(Rasterize, OutOfBounds) {
  const PointCloud cloud = with_ring({{1, 0, 0, 0}}, {0});
  EXPECT_THROW(rasterize(cloud, std::vector<PixelCoord>{{4, 0}}, 1, 4), BoundsError);
  EXPECT_THROW(rasterize(cloud, std::vector<PixelCoord>{{0, 1}}, 1, 4), BoundsError);
  EXPECT_THROW(rasterize(cloud, std::vector<PixelCoord>{}, 1, 4), ShapeError);
}

TEST(Rasterize, PermutationInvariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    PointCloud cloud = fixtures::random_cloud(400, 4, rng);
    // Force collisions, including exact range ties.
    cloud.points[1] = cloud.points[0];
    (*cloud.ring)[1] = (*cloud.ring)[0];
    cloud.points[1].intensity = 0.123f;
    const RangeImage ref = rasterize(cloud, scan_unfold(cloud, 16), 4, 16);

    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    PointCloud shuffled;
    shuffled.ring.emplace();
    for (std::size_t i : perm) {
      shuffled.points.push_back(cloud.points[i]);
      shuffled.ring->push_back((*cloud.ring)[i]);
    }
    const RangeImage img = rasterize(shuffled, scan_unfold(shuffled, 16), 4, 16);
    EXPECT_EQ(img.data, ref.data);
    EXPECT_EQ(img.valid, ref.valid);
  }
}

TEST(Rasterize, ValidPixelsCarryPositiveRange) {
  std::mt19937_64 rng(6);
  const PointCloud cloud = fixtures::random_cloud(1000, 32, rng);
  const RangeImage img = rasterize(cloud, scan_unfold(cloud, 256), 32, 256);
  std::size_t valid = 0;
  for (std::uint32_t v = 0; v < img.height; ++v)
    for (std::uint32_t u = 0; u < img.width; ++u) {
      if (img.is_valid(v, u)) {
        ++valid;
        EXPECT_GT(img.at(3, v, u), 0.0f);
      } else {
        EXPECT_EQ(img.at(3, v, u), kInvalidFill);
      }
    }
  std::set<std::pair<std::uint32_t, std::uint32_t>> hit;
  for (const auto& p : img.lut) hit.insert({p.v, p.u});
  EXPECT_EQ(valid, hit.size());
}

TEST(InferRings, ThreeSweeps) {
  for (bool ccw : {false, true}) {
    const PointCloud cloud = fixtures::sweep_cloud(3, 100, ccw, 9);
    const auto ring = infer_rings(cloud, 64);
    ASSERT_EQ(ring.size(), 300u);
    for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(ring[i], i / 100) << "ccw=" << ccw << " i=" << i;
  }
}

TEST(InferRings, TrivialCases) {
  PointCloud one;
  one.points = {{1, 2, 0, 0}};
  EXPECT_EQ(infer_rings(one, 1), (std::vector<std::uint16_t>{0}));
  EXPECT_TRUE(infer_rings(PointCloud{}, 4).empty());

  const PointCloud monotone = fixtures::sweep_cloud(1, 50, true, 1);
  const auto ring = infer_rings(monotone, 1);
  EXPECT_TRUE(std::all_of(ring.begin(), ring.end(), [](auto r) { return r == 0; }));
}

TEST(InferRings, TooManyRings) {
  EXPECT_THROW(infer_rings(fixtures::sweep_cloud(5, 40, true, 2), 4), RingInferenceError);
  EXPECT_THROW(infer_rings(PointCloud{}, 0), PreconditionError);
}

TEST(PixelAngles, MatchesLinearModel) {
  const auto g = pixel_angles({-15.0, 3.0, 0.0, 360.0}, 64, 360);
  EXPECT_DOUBLE_EQ(g.alpha[0], 15.0);
  EXPECT_DOUBLE_EQ(g.theta[90], 90.0);
  EXPECT_DOUBLE_EQ(g.alpha[10], 18.0 / 64.0 * 10.0 + 15.0);
  const auto one = pixel_angles({-25.0, 3.0, 0.0, 360.0}, 1, 1);
  EXPECT_DOUBLE_EQ(one.alpha[0], 25.0);
  EXPECT_THROW(pixel_angles({}, 0, 4), PreconditionError);
  EXPECT_THROW(pixel_angles({3.0, -25.0, 0.0, 360.0}, 4, 4), PreconditionError);
}

TEST(Backproject, SphericalModel) {
  auto near = [](Cartesian a, Cartesian b) {
    return std::abs(a.x - b.x) < 1e-12 && std::abs(a.y - b.y) < 1e-12 && std::abs(a.z - b.z) < 1e-12;
  };
  EXPECT_TRUE(near(backproject(1, 0, 0), {1, 0, 0}));
  EXPECT_TRUE(near(backproject(1, 90, 123), {0, 0, 1}));
  EXPECT_TRUE(near(backproject(2, 0, 90), {0, 2, 0}));
  EXPECT_TRUE(near(backproject(0, 17, 33), {0, 0, 0}));
}

TEST(Backproject, RoundTripOnDistinctPixels) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud raw = fixtures::random_cloud(300, 64, rng);
    const auto uv = scan_unfold(raw, 2048);
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    PointCloud cloud;
    cloud.ring.emplace();
    for (std::size_t i = 0; i < raw.size(); ++i)
      if (seen.insert({uv[i].u, uv[i].v}).second) {
        cloud.points.push_back(raw.points[i]);
        cloud.ring->push_back((*raw.ring)[i]);
      }
    const RangeImage img = project(cloud, 64, 2048);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto px = img.lut[i];
      const double x = img.at(0, px.v, px.u), y = img.at(1, px.v, px.u), z = img.at(2, px.v, px.u);
      const double r = img.at(3, px.v, px.u);
      const double alpha = std::asin(z / r) * 180.0 / M_PI;
      const auto p = backproject(r, alpha, compute_azimuth(x, y));
      EXPECT_NEAR(p.x, cloud.points[i].x, 1e-4);
      EXPECT_NEAR(p.y, cloud.points[i].y, 1e-4);
      EXPECT_NEAR(p.z, cloud.points[i].z, 1e-4);
    }
  }
}

TEST(Project, InfersRingsWhenAbsent) {
  const PointCloud cloud = fixtures::sweep_cloud(4, 64, true, 3);
  const RangeImage img = project(cloud, 4, 64);
  for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(img.lut[i].v, i / 64);
}

TEST(Project, SidecarOverridesInference) {
  PointCloud cloud = fixtures::sweep_cloud(2, 16, true, 3);
  cloud.ring = std::vector<std::uint16_t>(cloud.size(), 5);
  const RangeImage img = project(cloud, 8, 16);
  for (const auto& p : img.lut) EXPECT_EQ(p.v, 5u);
}

TEST(BackprojectImage, ValidPixelsOnly) {
  std::mt19937_64 rng(12);
  const PointCloud cloud = fixtures::random_cloud(500, 16, rng);
  const RangeImage img = project(cloud, 16, 128);
  const PointCloud back = backproject_image(img, {});
  const auto valid = static_cast<std::size_t>(std::count(img.valid.begin(), img.valid.end(), 1));
  EXPECT_EQ(back.size(), valid);
  for (const auto& p : back.points) EXPECT_TRUE(std::isfinite(p.x) && std::isfinite(p.z));
}

}  // namespace
}  // namespace rangedam::projection
