#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace rangedam {

/// Channel layout of a projected range image.
enum class InputChannel : std::size_t { x = 0, y = 1, z = 2, range = 3, intensity = 4 };
inline constexpr std::size_t kInputChannels = 5;
inline constexpr float kInvalidFill = -1.0f;
inline constexpr std::uint16_t kIgnoreLabel = 255;

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;
};

/// LiDAR scan. Rings, when present, are beam indices in sensor order.
struct PointCloud {
  std::vector<Point> points;
  std::optional<std::vector<std::uint16_t>> ring;

  std::size_t size() const noexcept { return points.size(); }
  bool has_ring() const noexcept { return ring.has_value(); }
};

struct LabelArray {
  std::vector<std::uint16_t> semantic;

  std::size_t size() const noexcept { return semantic.size(); }
};

/// Pixel coordinate of a point; `unprojected()` marks points that never
/// reached the image.
struct PixelCoord {
  std::uint32_t u = 0;
  std::uint32_t v = 0;

  static constexpr PixelCoord unprojected() noexcept { return {0xFFFFFFFFu, 0xFFFFFFFFu}; }
  bool is_projected() const noexcept { return !(*this == unprojected()); }
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// C x H x W grid, row-major over (c, v, u), plus validity mask and the
/// point-to-pixel lookup table.
struct RangeImage {
  std::uint32_t channels = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> data;
  std::vector<std::uint8_t> valid;
  std::vector<PixelCoord> lut;

  static RangeImage empty(std::uint32_t channels, std::uint32_t height, std::uint32_t width);

  std::size_t pixels() const noexcept { return static_cast<std::size_t>(height) * width; }
  float& at(std::size_t c, std::size_t v, std::size_t u) { return data[(c * height + v) * width + u]; }
  float at(std::size_t c, std::size_t v, std::size_t u) const { return data[(c * height + v) * width + u]; }
  bool is_valid(std::size_t v, std::size_t u) const { return valid[v * width + u] != 0; }

  friend bool operator==(const RangeImage&, const RangeImage&) = default;
};

/// Raw-id -> train-id remapping. Ids without an entry map to kIgnoreLabel.
class ClassMap {
 public:
  ClassMap() = default;
  explicit ClassMap(std::map<std::uint32_t, std::uint16_t> table) : table_(std::move(table)) {}

  /// Parses `raw = train` lines; `#` starts a comment.
  static ClassMap load(const std::filesystem::path& path);

  std::uint16_t operator()(std::uint32_t raw) const;
  bool empty() const noexcept { return table_.empty(); }

 private:
  std::map<std::uint32_t, std::uint16_t> table_;
};

/// KITTI velodyne format: 4 x float32 LE per point.
PointCloud read_point_cloud_bin(const std::filesystem::path& path);
void write_point_cloud_bin(const PointCloud& cloud, const std::filesystem::path& path);

/// SemanticKITTI .label: u32 LE per point, semantic id in the low 16 bits.
/// When `expected_points` is given, a different count is a format error.
LabelArray read_labels(const std::filesystem::path& path,
                       std::optional<std::size_t> expected_points = std::nullopt);
void write_labels(const LabelArray& labels, const std::filesystem::path& path);
LabelArray remap_labels(const LabelArray& labels, const ClassMap& map);

/// Ring sidecar: u16 LE per point.
std::vector<std::uint16_t> read_ring_sidecar(const std::filesystem::path& path,
                                             std::optional<std::size_t> expected_points = std::nullopt);
void write_ring_sidecar(std::span<const std::uint16_t> ring, const std::filesystem::path& path);

/// "RIMG" container, version 1.
void write_range_image(const RangeImage& img, const std::filesystem::path& path);
RangeImage read_range_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_range_image(const RangeImage& img);
RangeImage decode_range_image(std::span<const std::uint8_t> bytes);

/// Rescales intensities to [0, 1] by the scan's min/max; constant scans map to 0.
void normalize_intensity(PointCloud& cloud);

}  // namespace rangedam
