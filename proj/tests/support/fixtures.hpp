#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "rangedam/arch.hpp"
#include "rangedam/core_io.hpp"
#include "rangedam/dam.hpp"
#include "rangedam/projection.hpp"
#include "rangedam/tensor.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("rangedam_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline rangedam::ad::Tensor<double> random_tensor(rangedam::ad::Shape shape, std::mt19937_64& rng,
                                                  double stddev = 1.0) {
  rangedam::ad::Tensor<double> t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data) v = dist(rng);
  return t;
}

/// Points with random rings in [0, height) and ranges in [0.5, 80] m, never on
/// the z-axis.
inline rangedam::PointCloud random_cloud(std::size_t n, std::uint32_t height, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> range(0.5, 80.0), azimuth(-180.0, 180.0), elevation(-25.0, 3.0),
      unit(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> ring(0, height - 1);
  rangedam::PointCloud cloud;
  cloud.ring.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = rangedam::projection::backproject(range(rng), elevation(rng), azimuth(rng));
    cloud.points.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                            static_cast<float>(unit(rng))});
    cloud.ring->push_back(static_cast<std::uint16_t>(ring(rng)));
  }
  return cloud;
}

/// `sweeps` rings of `per_ring` points each, azimuth monotone within a ring
/// (counter-clockwise when ccw, else clockwise), stored in firing order.
inline rangedam::PointCloud sweep_cloud(std::size_t sweeps, std::size_t per_ring, bool ccw, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> range(2.0, 50.0), jitter(0.0, 0.3);
  rangedam::PointCloud cloud;
  for (std::size_t s = 0; s < sweeps; ++s)
    for (std::size_t k = 0; k < per_ring; ++k) {
      const double step = 360.0 / static_cast<double>(per_ring);
      double theta = (static_cast<double>(k) + 0.5 + jitter(rng)) * step;
      if (!ccw) theta = 360.0 - theta;
      const auto p = rangedam::projection::backproject(range(rng), 2.0 - 1.5 * static_cast<double>(s), theta);
      cloud.points.push_back({static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z), 0.5f});
    }
  return cloud;
}

inline oracle::Vec flat(const rangedam::ad::Tensor<double>& t) { return t.data; }

inline oracle::Mlp mlp_of(const rangedam::dam::DamParams<double>& p) {
  oracle::Mlp m;
  m.c = p.channels();
  m.hidden = p.hidden();
  m.w1 = p.w1.data;
  m.b1 = p.b1.data;
  m.w2 = p.w2.data;
  m.b2 = p.b2.data;
  m.bias = p.config.use_bias;
  m.gelu_act = p.config.activation == rangedam::dam::Activation::gelu;
  return m;
}

/// Oracle block from the tensors of one block in slot order.
inline oracle::Block block_of(const rangedam::arch::BlockSpec& spec, const rangedam::arch::BlockOptions& options,
                              const std::vector<rangedam::ad::Tensor<double>>& slots, std::size_t h, std::size_t w) {
  oracle::Block b;
  b.c = spec.channels;
  b.h = h;
  b.w = w;
  b.dw = slots[0].data;
  b.ln_g = slots[1].data;
  b.ln_b = slots[2].data;
  b.pw1_w = slots[3].data;
  b.pw1_b = slots[4].data;
  b.pw2_w = slots[5].data;
  b.pw2_b = slots[6].data;
  b.eps = options.ln_eps;
  if (spec.kind == rangedam::arch::BlockKind::plain) {
    b.ls_gamma = slots[7].data;
  } else {
    oracle::Mlp m;
    m.c = spec.width();
    m.hidden = slots[7].shape[0];
    m.w1 = slots[7].data;
    m.b1 = slots[8].data;
    m.w2 = slots[9].data;
    m.b2 = slots[10].data;
    m.bias = options.dam.use_bias;
    m.gelu_act = options.dam.activation == rangedam::dam::Activation::gelu;
    b.dam = m;
    b.use_gap = options.dam.use_gap;
    b.use_spe = options.dam.use_spe;
    b.spe_dim = options.dam.spe_dim;
  }
  return b;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

}  // namespace fixtures
