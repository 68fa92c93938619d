#include "rangedam/core_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "rangedam/error.hpp"

namespace rangedam {
namespace {

constexpr std::uint32_t kContainerVersion = 1;
constexpr char kMagic[4] = {'R', 'I', 'M', 'G'};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::uint32_t load_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::uint16_t load_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

float load_f32(const std::uint8_t* p) { return std::bit_cast<float>(load_u32(p)); }

void store_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void store_f32(std::vector<std::uint8_t>& out, float v) { store_u32(out, std::bit_cast<std::uint32_t>(v)); }

// Bounds-checked cursor over a byte buffer; running off the end is a format error.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("range image container truncated");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() { return load_u32(take(4)); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t checked_product(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > UINT64_MAX / a) throw FormatError("range image dimensions overflow");
  return a * b;
}

}  // namespace

RangeImage RangeImage::empty(std::uint32_t channels, std::uint32_t height, std::uint32_t width) {
  RangeImage img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.data.assign(static_cast<std::size_t>(channels) * height * width, kInvalidFill);
  img.valid.assign(static_cast<std::size_t>(height) * width, 0);
  return img;
}

ClassMap ClassMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open class map " + path.string());
  std::map<std::uint32_t, std::uint16_t> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'raw = train'");
    std::istringstream lhs(line.substr(0, eq)), rhs(line.substr(eq + 1));
    long long raw = -1, train = -1;
    lhs >> raw;
    rhs >> train;
    if (lhs.fail() || rhs.fail() || raw < 0 || raw > UINT32_MAX || train < 0 || train > UINT16_MAX)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad class id");
    table[static_cast<std::uint32_t>(raw)] = static_cast<std::uint16_t>(train);
  }
  return ClassMap(std::move(table));
}

std::uint16_t ClassMap::operator()(std::uint32_t raw) const {
  const auto it = table_.find(raw);
  return it == table_.end() ? kIgnoreLabel : it->second;
}

PointCloud read_point_cloud_bin(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % 16 != 0)
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of 16");
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const std::uint8_t* p = bytes.data() + 16 * i;
    Point& pt = cloud.points[i];
    pt.x = load_f32(p);
    pt.y = load_f32(p + 4);
    pt.z = load_f32(p + 8);
    pt.intensity = load_f32(p + 12);
    if (!std::isfinite(pt.x) || !std::isfinite(pt.y) || !std::isfinite(pt.z) || !std::isfinite(pt.intensity))
      throw FormatError(path.string() + ": non-finite value in point " + std::to_string(i));
  }
  return cloud;
}

void write_point_cloud_bin(const PointCloud& cloud, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.reserve(cloud.size() * 16);
  for (const Point& pt : cloud.points) {
    store_f32(out, pt.x);
    store_f32(out, pt.y);
    store_f32(out, pt.z);
    store_f32(out, pt.intensity);
  }
  write_file(path, out);
}

LabelArray read_labels(const std::filesystem::path& path, std::optional<std::size_t> expected_points) {
  const auto bytes = read_file(path);
  if (bytes.size() % 4 != 0)
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of 4");
  const std::size_t n = bytes.size() / 4;
  if (expected_points && *expected_points != n)
    throw FormatError(path.string() + ": " + std::to_string(n) + " labels for " + std::to_string(*expected_points) +
                      " points");
  LabelArray labels;
  labels.semantic.resize(n);
  for (std::size_t i = 0; i < n; ++i) labels.semantic[i] = static_cast<std::uint16_t>(load_u32(bytes.data() + 4 * i) & 0xFFFFu);
  return labels;
}

void write_labels(const LabelArray& labels, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.reserve(labels.size() * 4);
  for (std::uint16_t id : labels.semantic) store_u32(out, id);
  write_file(path, out);
}

LabelArray remap_labels(const LabelArray& labels, const ClassMap& map) {
  LabelArray out;
  out.semantic.reserve(labels.size());
  for (std::uint16_t id : labels.semantic) out.semantic.push_back(map(id));
  return out;
}

std::vector<std::uint16_t> read_ring_sidecar(const std::filesystem::path& path,
                                             std::optional<std::size_t> expected_points) {
  const auto bytes = read_file(path);
  if (bytes.size() % 2 != 0) throw FormatError(path.string() + ": ring sidecar length is odd");
  const std::size_t n = bytes.size() / 2;
  if (expected_points && *expected_points != n)
    throw FormatError(path.string() + ": " + std::to_string(n) + " rings for " + std::to_string(*expected_points) +
                      " points");
  std::vector<std::uint16_t> ring(n);
  for (std::size_t i = 0; i < n; ++i) ring[i] = load_u16(bytes.data() + 2 * i);
  return ring;
}

void write_ring_sidecar(std::span<const std::uint16_t> ring, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.reserve(ring.size() * 2);
  for (std::uint16_t r : ring) {
    out.push_back(static_cast<std::uint8_t>(r));
    out.push_back(static_cast<std::uint8_t>(r >> 8));
  }
  write_file(path, out);
}

std::vector<std::uint8_t> encode_range_image(const RangeImage& img) {
  const std::size_t values = static_cast<std::size_t>(img.channels) * img.height * img.width;
  if (img.data.size() != values || img.valid.size() != img.pixels())
    throw ShapeError("range image buffers do not match its dimensions");
  std::vector<std::uint8_t> out;
  out.reserve(20 + 4 * values + img.pixels() + 4 + 8 * img.lut.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  store_u32(out, kContainerVersion);
  store_u32(out, img.channels);
  store_u32(out, img.height);
  store_u32(out, img.width);
  for (float v : img.data) store_f32(out, v);
  for (std::uint8_t v : img.valid) out.push_back(v ? 1 : 0);
  store_u32(out, static_cast<std::uint32_t>(img.lut.size()));
  for (const PixelCoord& c : img.lut) {
    store_u32(out, c.u);
    store_u32(out, c.v);
  }
  return out;
}

RangeImage decode_range_image(std::span<const std::uint8_t> bytes) {
  Reader rd(bytes);
  if (std::memcmp(rd.take(4), kMagic, 4) != 0) throw FormatError("bad range image magic");
  if (const auto version = rd.u32(); version != kContainerVersion)
    throw FormatError("unsupported range image version " + std::to_string(version));
  RangeImage img;
  img.channels = rd.u32();
  img.height = rd.u32();
  img.width = rd.u32();
  const std::uint64_t pixels = checked_product(img.height, img.width);
  const std::uint64_t values = checked_product(pixels, img.channels);
  // Reject sizes the buffer cannot possibly hold before allocating.
  if (values > bytes.size() / 4 || pixels > bytes.size()) throw FormatError("range image container truncated");

  img.data.resize(values);
  const std::uint8_t* p = rd.take(4 * values);
  for (std::size_t i = 0; i < values; ++i) {
    img.data[i] = load_f32(p + 4 * i);
    if (!std::isfinite(img.data[i])) throw FormatError("non-finite value in range image");
  }
  const std::uint8_t* mask = rd.take(pixels);
  img.valid.resize(pixels);
  for (std::size_t i = 0; i < pixels; ++i) {
    if (mask[i] > 1) throw FormatError("validity byte is neither 0 nor 1");
    img.valid[i] = mask[i];
  }
  const std::uint32_t n = rd.u32();
  if (n > bytes.size() / 8) throw FormatError("range image container truncated");
  img.lut.resize(n);
  for (auto& c : img.lut) {
    c.u = rd.u32();
    c.v = rd.u32();
  }
  if (!rd.at_end()) throw FormatError("trailing bytes after range image container");
  return img;
}

void write_range_image(const RangeImage& img, const std::filesystem::path& path) {
  write_file(path, encode_range_image(img));
}

RangeImage read_range_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_range_image(bytes);
}

void normalize_intensity(PointCloud& cloud) {
  if (cloud.points.empty()) return;
  const auto [lo, hi] = std::minmax_element(cloud.points.begin(), cloud.points.end(),
                                            [](const Point& a, const Point& b) { return a.intensity < b.intensity; });
  const float min = lo->intensity, span = hi->intensity - lo->intensity;
  for (Point& pt : cloud.points) pt.intensity = span > 0.0f ? (pt.intensity - min) / span : 0.0f;
}

}  // namespace rangedam
