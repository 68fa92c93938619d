#include "rangedam/toy_train.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "rangedam/error.hpp"
#include "rangedam/metrics.hpp"
#include "rangedam/projection.hpp"

namespace rangedam::toy {
namespace {

constexpr double kSensorHeight = 1.73;
constexpr double kTopElevation = 2.0;  // degrees, row 0
constexpr double kRowStep = 1.8;       // degrees per row
constexpr double kMaxRange = 60.0;
constexpr double kRangeNoise = 0.05;

double row_elevation(std::uint32_t v) { return kTopElevation - kRowStep * v; }
double column_azimuth(std::uint32_t u) { return (u + 0.5) * 360.0 / kSceneWidth; }

struct Box {
  std::uint32_t u0, span, top;
  double range;
  SceneClass cls;
};

SyntheticScene render(std::uint64_t seed, std::size_t index, const DepthBands& bands) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_int = [&rng](std::uint32_t lo, std::uint32_t hi) {
    return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
  };

  std::vector<Box> boxes(uniform_int(1, 4));
  for (Box& b : boxes) {
    b.cls = unit(rng) < 0.5 ? kNearObject : kFarObject;
    const double lo = b.cls == kNearObject ? bands.near_min : bands.far_min;
    const double hi = b.cls == kNearObject ? bands.near_max : bands.far_max;
    b.range = lo + kRangeNoise + (hi - lo - 2 * kRangeNoise) * unit(rng);
    b.u0 = uniform_int(0, kSceneWidth - 1);
    b.span = uniform_int(3, 10);
    b.top = uniform_int(0, 8);
  }

  SyntheticScene scene;
  scene.seed = seed;
  scene.image = RangeImage::empty(static_cast<std::uint32_t>(kInputChannels), kSceneHeight, kSceneWidth);
  scene.labels.assign(scene.image.pixels(), kIgnoreLabel);
  for (std::uint32_t v = 0; v < kSceneHeight; ++v) {
    const double alpha = row_elevation(v);
    for (std::uint32_t u = 0; u < kSceneWidth; ++u) {
      // z-buffer over the ground plane and every box covering this pixel.
      double best = std::numeric_limits<double>::infinity();
      std::uint16_t cls = kIgnoreLabel;
      if (alpha < 0.0) {
        const double ground = kSensorHeight / std::sin(-alpha * std::numbers::pi / 180.0);
        if (ground <= kMaxRange) {
          best = ground;
          cls = kGround;
        }
      }
      for (const Box& b : boxes) {
        const bool covers_col = (u + kSceneWidth - b.u0) % kSceneWidth < b.span;
        if (covers_col && v >= b.top && b.range < best) {
          best = b.range;
          cls = b.cls;
        }
      }
      if (cls == kIgnoreLabel) continue;
      const double r = cls == kGround ? best : best + kRangeNoise * (2.0 * unit(rng) - 1.0);
      const auto p = projection::backproject(r, alpha, column_azimuth(u));
      RangeImage& img = scene.image;
      img.valid[v * kSceneWidth + u] = 1;
      img.at(0, v, u) = static_cast<float>(p.x);
      img.at(1, v, u) = static_cast<float>(p.y);
      img.at(2, v, u) = static_cast<float>(p.z);
      img.at(3, v, u) = static_cast<float>(r);
      img.at(4, v, u) = static_cast<float>(unit(rng));
      scene.labels[v * kSceneWidth + u] = cls;
    }
  }
  return scene;
}

}  // namespace

std::vector<SyntheticScene> generate(std::uint64_t seed, std::size_t n, const DepthBands& bands) {
  if (n == 0) throw PreconditionError("generate needs n >= 1");
  std::vector<SyntheticScene> scenes;
  scenes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) scenes.push_back(render(seed, i, bands));
  return scenes;
}

template <typename Real>
ad::Tensor<Real> scene_input(const SyntheticScene& scene) {
  // Per-channel scale for (x, y, z, r, intensity).
  static constexpr double kScale[kInputChannels] = {1.0 / 20.0, 1.0 / 20.0, 1.0 / 2.0, 1.0 / 20.0, 1.0};
  const RangeImage& img = scene.image;
  ad::Tensor<Real> t(ad::Shape{img.channels, img.height, img.width});
  const std::size_t plane = img.pixels();
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const float v = img.data[c * plane + p];
      t[c * plane + p] = static_cast<Real>(img.valid[p] ? v * kScale[c] : v);
    }
  return t;
}

TrainConfig default_train_config(bool use_gap, bool use_spe, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.model.in_channels = kInputChannels;
  cfg.model.num_classes = kSceneClasses;
  cfg.model.stages = {{2, 2}, arch::Placement::last_one};
  cfg.model.widths = {8, 16};
  cfg.model.block.dam.use_gap = use_gap;
  cfg.model.block.dam.use_spe = use_spe;
  cfg.seed = seed;
  return cfg;
}

template <typename Real>
TrainResult<Real> train(const TrainConfig& config, const std::vector<SyntheticScene>& scenes) {
  if (config.steps == 0) throw PreconditionError("train needs steps >= 1");
  if (scenes.empty()) throw PreconditionError("train needs at least one scene");
  if (config.batch == 0) throw PreconditionError("train needs batch >= 1");

  arch::SegmentationModel<Real> model(config.model, config.seed);
  std::vector<ad::Tensor<Real>> inputs;
  for (const auto& s : scenes) inputs.push_back(scene_input<Real>(s));

  auto& params = model.params();
  std::vector<std::vector<Real>> velocity;
  for (const auto& e : params) velocity.emplace_back(e.value.numel(), Real(0));
  std::vector<std::vector<Real>> grads = velocity;

  // Epoch-wise shuffled scene order drawn from a stream separate from init.
  std::mt19937_64 order_rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), order_rng);
  std::size_t cursor = 0;

  TrainResult<Real> result;
  result.losses.reserve(config.steps);
  const Real lr = static_cast<Real>(config.lr), mu = static_cast<Real>(config.momentum);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& g : grads) std::fill(g.begin(), g.end(), Real(0));
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      ad::Tape<Real> tape;
      const auto leaves = params.bind(tape);
      const auto logits = model.forward(tape.constant(inputs[idx]), leaves);
      const auto loss = ad::pixel_cross_entropy(logits, scenes[idx].labels, kIgnoreLabel);
      tape.backward(loss);
      batch_loss += static_cast<double>(loss.value()[0]);
      for (std::size_t k = 0; k < leaves.size(); ++k) {
        const auto g = leaves[k].grad();
        for (std::size_t i = 0; i < g.size(); ++i) grads[k][i] += g[i];
      }
    }
    batch_loss /= static_cast<double>(config.batch);
    if (!std::isfinite(batch_loss))
      throw DivergenceError("training diverged: non-finite loss at step " + std::to_string(step), step);
    result.losses.push_back(batch_loss);

    const Real inv_batch = Real(1) / static_cast<Real>(config.batch);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& value = params[k].value.data;
      for (std::size_t i = 0; i < value.size(); ++i) {
        velocity[k][i] = mu * velocity[k][i] + grads[k][i] * inv_batch;
        value[i] -= lr * velocity[k][i];
      }
    }
  }
  result.params = params;
  return result;
}

bool within_tripwire(const std::vector<double>& losses, std::size_t window, double factor) {
  if (window == 0) return true;
  double previous_best = std::numeric_limits<double>::infinity();
  for (std::size_t start = 0; start < losses.size(); start += window) {
    const auto first = losses.begin() + static_cast<std::ptrdiff_t>(start);
    const auto last = losses.begin() + static_cast<std::ptrdiff_t>(std::min(losses.size(), start + window));
    const double best = *std::min_element(first, last);
    if (!std::isfinite(best) || best > factor * previous_best) return false;
    previous_best = best;
  }
  return true;
}

template <typename Real>
double evaluate_miou(const arch::SegmentationModel<Real>& model, const std::vector<SyntheticScene>& scenes) {
  metrics::ConfusionMatrix cm(kSceneClasses);
  for (const auto& s : scenes) cm.accumulate(s.labels, model.predict(scene_input<Real>(s)));
  return cm.miou();
}

template <typename Real>
std::vector<AblationRow> ablation_run(std::uint64_t seed, const AblationOptions& options) {
  const auto train_set = generate(seed, options.train_scenes);
  // Held-out scenes come from a disjoint generator stream.
  const auto eval_set = generate(seed + 0x5EEDull, options.eval_scenes);
  std::vector<AblationRow> rows;
  constexpr std::array<std::pair<bool, bool>, 4> kFlags{{{false, false}, {true, false}, {false, true}, {true, true}}};
  for (const auto& [gap, spe] : kFlags) {
    TrainConfig cfg = default_train_config(gap, spe, seed);
    cfg.steps = options.steps;
    auto result = train<Real>(cfg, train_set);
    arch::SegmentationModel<Real> model(cfg.model, cfg.seed);
    model.params() = std::move(result.params);
    rows.push_back({gap, spe, evaluate_miou(model, eval_set), result.losses.front(), result.losses.back(),
                    std::move(result.losses)});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "gap,spe,miou,initial_loss,final_loss\n";
  for (const auto& r : rows)
    os << int(r.use_gap) << ',' << int(r.use_spe) << ',' << r.miou << ',' << r.initial_loss << ',' << r.final_loss
       << '\n';
  return os.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "GAP  SPE  mIoU(%)  loss(first -> last)\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << (r.use_gap ? " x " : "   ") << "  " << (r.use_spe ? " x " : "   ") << "  " << std::setw(7)
       << std::setprecision(2) << 100.0 * r.miou << "  " << std::setprecision(4) << r.initial_loss << " -> "
       << r.final_loss << '\n';
  }
  return os.str();
}

std::string loss_csv(const std::vector<double>& losses) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
  return os.str();
}

#define RANGEDAM_INSTANTIATE_TOY(R)                                                            \
  template ad::Tensor<R> scene_input<R>(const SyntheticScene&);                                \
  template TrainResult<R> train<R>(const TrainConfig&, const std::vector<SyntheticScene>&);    \
  template double evaluate_miou(const arch::SegmentationModel<R>&, const std::vector<SyntheticScene>&); \
  template std::vector<AblationRow> ablation_run<R>(std::uint64_t, const AblationOptions&);

RANGEDAM_INSTANTIATE_TOY(float)
RANGEDAM_INSTANTIATE_TOY(double)

#undef RANGEDAM_INSTANTIATE_TOY

}  // namespace rangedam::toy
