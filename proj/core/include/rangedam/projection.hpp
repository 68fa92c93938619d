#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rangedam/core_io.hpp"

namespace rangedam::projection {

/// Sensor field of view in degrees.
struct FieldOfView {
  double lvfov = -25.0;  ///< lowest vertical angle
  double hvfov = 3.0;    ///< highest vertical angle
  double lhfov = 0.0;    ///< lowest horizontal angle
  double hhfov = 360.0;  ///< highest horizontal angle

  /// Throws PreconditionError unless lvfov < hvfov and lhfov < hhfov.
  void validate() const;
};

/// Per-row vertical and per-column horizontal pixel angles, degrees.
struct ProjectionGeometry {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<double> alpha;  ///< size height
  std::vector<double> theta;  ///< size width
};

struct Cartesian {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Full-quadrant azimuth of (x, y) folded into [0, 360). Throws
/// DegenerateError at the origin.
double compute_azimuth(double x, double y);

/// Column from azimuth and row from ring index for every point.
std::vector<PixelCoord> scan_unfold(const PointCloud& cloud, std::uint32_t width);

/// Column for a single azimuth: floor(theta / 360 * W) clamped to W - 1.
std::uint32_t azimuth_to_column(double theta, std::uint32_t width);

/// Writes (x, y, z, r, intensity) of the nearest point per pixel. Ties in
/// range are broken by point contents so the result does not depend on
/// input order. Unprojected coordinates are skipped.
RangeImage rasterize(const PointCloud& cloud, std::span<const PixelCoord> uv, std::uint32_t height,
                     std::uint32_t width);

/// Ring index per point, counting azimuth wrap-arounds of a cloud stored in
/// firing order.
std::vector<std::uint16_t> infer_rings(const PointCloud& cloud, std::uint32_t height);

ProjectionGeometry pixel_angles(const FieldOfView& fov, std::uint32_t height, std::uint32_t width);

/// Spherical model: (r, alpha, theta) in metres/degrees to Cartesian.
Cartesian backproject(double range, double alpha_deg, double theta_deg);

/// Unfolds and rasterizes, inferring rings when the cloud carries none.
RangeImage project(const PointCloud& cloud, std::uint32_t height, std::uint32_t width);

/// Cartesian points for every valid pixel, using the range channel and the
/// pixel angles of `fov`.
PointCloud backproject_image(const RangeImage& img, const FieldOfView& fov);

}  // namespace rangedam::projection
