#include "rangedam/projection.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <tuple>

#include "rangedam/error.hpp"

namespace rangedam::projection {
namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;
constexpr double kDegToRad = std::numbers::pi / 180.0;

double point_range(const Point& p) {
  const double x = p.x, y = p.y, z = p.z;
  return std::sqrt(x * x + y * y + z * z);
}

// Strict weak order used for collisions: nearest first, then point contents.
bool closer(const Point& a, double ra, const Point& b, double rb) {
  return std::tie(ra, a.x, a.y, a.z, a.intensity) < std::tie(rb, b.x, b.y, b.z, b.intensity);
}

}  // namespace

void FieldOfView::validate() const {
  if (!(lvfov < hvfov)) throw PreconditionError("field of view: lvfov must be below hvfov");
  if (!(lhfov < hhfov)) throw PreconditionError("field of view: lhfov must be below hhfov");
}

double compute_azimuth(double x, double y) {
  if (x == 0.0 && y == 0.0) throw DegenerateError("azimuth undefined at the origin of the xy-plane");
  // Quadrant-resolved arctangent evaluated on the ratio of the smaller to the
  // larger component, so (kx, ky) hits the same rounded ratio as (x, y).
  double theta;
  if (std::abs(x) >= std::abs(y)) {
    const double a = std::atan(y / x) * kRadToDeg;
    theta = x > 0.0 ? a : a + 180.0;
  } else {
    const double a = std::atan(x / y) * kRadToDeg;
    theta = y > 0.0 ? 90.0 - a : -90.0 - a;
  }
  if (theta < 0.0) theta += 360.0;
  // -tiny + 360 rounds to 360; that direction is column 0.
  if (theta >= 360.0) theta = 0.0;
  return theta + 0.0;  // -0 -> +0
}

std::uint32_t azimuth_to_column(double theta, std::uint32_t width) {
  const double u = std::floor(theta / 360.0 * width);
  if (u <= 0.0) return 0;
  if (u >= static_cast<double>(width - 1)) return width - 1;
  return static_cast<std::uint32_t>(u);
}

std::vector<PixelCoord> scan_unfold(const PointCloud& cloud, std::uint32_t width) {
  if (!cloud.has_ring()) throw PreconditionError("scan_unfold requires per-point ring indices");
  if (width == 0) throw PreconditionError("scan_unfold requires width >= 1");
  const auto& ring = *cloud.ring;
  if (ring.size() != cloud.size()) throw ShapeError("ring count does not match point count");
  std::vector<PixelCoord> uv(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    uv[i] = {azimuth_to_column(compute_azimuth(p.x, p.y), width), ring[i]};
  }
  return uv;
}

RangeImage rasterize(const PointCloud& cloud, std::span<const PixelCoord> uv, std::uint32_t height,
                     std::uint32_t width) {
  if (uv.size() != cloud.size()) throw ShapeError("coordinate count does not match point count");
  RangeImage img = RangeImage::empty(static_cast<std::uint32_t>(kInputChannels), height, width);
  img.lut.assign(uv.begin(), uv.end());

  std::vector<std::int64_t> winner(img.pixels(), -1);
  std::vector<double> winner_range(img.pixels(), 0.0);
  for (std::size_t i = 0; i < uv.size(); ++i) {
    const PixelCoord c = uv[i];
    if (!c.is_projected()) continue;
    if (c.u >= width || c.v >= height)
      throw BoundsError("point " + std::to_string(i) + " maps to (" + std::to_string(c.u) + ", " +
                        std::to_string(c.v) + ") outside " + std::to_string(width) + "x" + std::to_string(height));
    const double r = point_range(cloud.points[i]);
    if (!(r > 0.0)) {
      img.lut[i] = PixelCoord::unprojected();
      continue;
    }
    const std::size_t pix = static_cast<std::size_t>(c.v) * width + c.u;
    if (winner[pix] < 0 || closer(cloud.points[i], r, cloud.points[winner[pix]], winner_range[pix])) {
      winner[pix] = static_cast<std::int64_t>(i);
      winner_range[pix] = r;
    }
  }

  const std::size_t plane = img.pixels();
  for (std::size_t pix = 0; pix < plane; ++pix) {
    if (winner[pix] < 0) continue;
    const Point& p = cloud.points[winner[pix]];
    img.valid[pix] = 1;
    img.data[0 * plane + pix] = p.x;
    img.data[1 * plane + pix] = p.y;
    img.data[2 * plane + pix] = p.z;
    img.data[3 * plane + pix] = static_cast<float>(winner_range[pix]);
    img.data[4 * plane + pix] = p.intensity;
  }
  return img;
}

std::vector<std::uint16_t> infer_rings(const PointCloud& cloud, std::uint32_t height) {
  if (height == 0) throw PreconditionError("infer_rings requires height >= 1");
  std::vector<std::uint16_t> ring(cloud.size(), 0);
  if (cloud.size() < 2) return ring;

  // Azimuth per point; points on the z-axis have none and inherit their
  // predecessor's ring.
  std::vector<double> theta(cloud.size(), std::nan(""));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point& p = cloud.points[i];
    if (p.x != 0.0f || p.y != 0.0f) theta[i] = compute_azimuth(p.x, p.y);
  }

  // Sweep direction from the in-ring steps (jumps under half a turn).
  double drift = 0.0;
  double prev = std::nan("");
  for (double t : theta) {
    if (std::isnan(t)) continue;
    if (!std::isnan(prev) && std::abs(t - prev) <= 180.0) drift += t - prev;
    prev = t;
  }
  const bool clockwise = drift <= 0.0;

  std::size_t current = 0;
  prev = std::nan("");
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double t = theta[i];
    if (!std::isnan(t)) {
      if (!std::isnan(prev)) {
        const double step = t - prev;
        if ((clockwise && step > 180.0) || (!clockwise && step < -180.0)) {
          ++current;
          if (current >= height)
            throw RingInferenceError("detected more than " + std::to_string(height) + " rings (wrap at point " +
                                     std::to_string(i) + ")");
        }
      }
      prev = t;
    }
    ring[i] = static_cast<std::uint16_t>(current);
  }
  return ring;
}

ProjectionGeometry pixel_angles(const FieldOfView& fov, std::uint32_t height, std::uint32_t width) {
  fov.validate();
  if (height == 0 || width == 0) throw PreconditionError("pixel_angles requires H >= 1 and W >= 1");
  ProjectionGeometry geo;
  geo.height = height;
  geo.width = width;
  geo.alpha.resize(height);
  geo.theta.resize(width);
  for (std::uint32_t row = 0; row < height; ++row) geo.alpha[row] = (fov.hvfov - fov.lvfov) / height * row - fov.lvfov;
  for (std::uint32_t col = 0; col < width; ++col) geo.theta[col] = (fov.hhfov - fov.lhfov) / width * col - fov.lhfov;
  return geo;
}

Cartesian backproject(double range, double alpha_deg, double theta_deg) {
  if (range < 0.0) throw PreconditionError("backproject requires r >= 0");
  const double a = alpha_deg * kDegToRad, t = theta_deg * kDegToRad;
  return {range * std::cos(a) * std::cos(t), range * std::cos(a) * std::sin(t), range * std::sin(a)};
}

RangeImage project(const PointCloud& cloud, std::uint32_t height, std::uint32_t width) {
  if (cloud.has_ring()) return rasterize(cloud, scan_unfold(cloud, width), height, width);
  PointCloud with_ring = cloud;
  with_ring.ring = infer_rings(cloud, height);
  return rasterize(with_ring, scan_unfold(with_ring, width), height, width);
}

PointCloud backproject_image(const RangeImage& img, const FieldOfView& fov) {
  if (img.channels < kInputChannels) throw ShapeError("backprojection needs the five input channels");
  PointCloud out;
  if (img.pixels() == 0) return out;
  const auto geo = pixel_angles(fov, img.height, img.width);
  const auto r_channel = static_cast<std::size_t>(InputChannel::range);
  const auto i_channel = static_cast<std::size_t>(InputChannel::intensity);
  for (std::uint32_t v = 0; v < img.height; ++v) {
    for (std::uint32_t u = 0; u < img.width; ++u) {
      if (!img.is_valid(v, u)) continue;
      const auto c = backproject(img.at(r_channel, v, u), geo.alpha[v], geo.theta[u]);
      out.points.push_back({static_cast<float>(c.x), static_cast<float>(c.y), static_cast<float>(c.z),
                            img.at(i_channel, v, u)});
    }
  }
  return out;
}

}  // namespace rangedam::projection
