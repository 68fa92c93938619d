#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rangedam/arch.hpp"
#include "rangedam/core_io.hpp"
#include "rangedam/tensor.hpp"

/// Desk-scale stand-in for a range-image segmentation benchmark: synthetic
/// scenes with a ground sweep and box objects in two disjoint depth bands.
namespace rangedam::toy {

enum SceneClass : std::uint16_t { kGround = 0, kNearObject = 1, kFarObject = 2 };
inline constexpr std::size_t kSceneClasses = 3;
inline constexpr std::uint32_t kSceneHeight = 16;
inline constexpr std::uint32_t kSceneWidth = 64;

/// Range bands (metres) of rendered object surfaces, noise included.
struct DepthBands {
  double near_min = 4.0;
  double near_max = 12.0;
  double far_min = 18.0;
  double far_max = 40.0;
};

struct SyntheticScene {
  RangeImage image;                   ///< 5 x 16 x 64
  std::vector<std::uint16_t> labels;  ///< per pixel; kIgnoreLabel where invalid
  std::uint64_t seed = 0;
};

/// n scenes, deterministic for a fixed seed. Throws PreconditionError for n = 0.
std::vector<SyntheticScene> generate(std::uint64_t seed, std::size_t n, const DepthBands& bands = {});

/// Model input: metric channels scaled to O(1), invalid pixels kept at the fill value.
template <typename Real>
ad::Tensor<Real> scene_input(const SyntheticScene& scene);

struct TrainConfig {
  arch::ModelSpec model;
  std::size_t steps = 500;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch = 4;
  std::uint64_t seed = 0;
};

/// Toy defaults: two stages of widths {8, 16}, depths {2, 2}, DAM in the
/// last block of each stage.
TrainConfig default_train_config(bool use_gap, bool use_spe, std::uint64_t seed);

template <typename Real>
struct TrainResult {
  arch::ParamStore<Real> params;
  std::vector<double> losses;  ///< batch loss before each update
};

/// Mini-batch SGD with momentum (v = mu v + g; p -= lr v) on mean per-pixel
/// cross entropy. Throws DivergenceError at the first non-finite loss.
template <typename Real>
TrainResult<Real> train(const TrainConfig& config, const std::vector<SyntheticScene>& scenes);

/// Divergence tripwire: the best loss of every `window`-step window stays
/// within `factor` times the best loss of the window before it.
bool within_tripwire(const std::vector<double>& losses, std::size_t window = 100, double factor = 10.0);

template <typename Real>
double evaluate_miou(const arch::SegmentationModel<Real>& model, const std::vector<SyntheticScene>& scenes);

struct AblationRow {
  bool use_gap = false;
  bool use_spe = false;
  double miou = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;
};

struct AblationOptions {
  std::size_t train_scenes = 24;
  std::size_t eval_scenes = 16;
  std::size_t steps = 500;
};

/// Trains neither / GAP / SPE / GAP+SPE with identical data, init seed and
/// schedule; mIoU on held-out scenes.
template <typename Real>
std::vector<AblationRow> ablation_run(std::uint64_t seed, const AblationOptions& options = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);
std::string loss_csv(const std::vector<double>& losses);

}  // namespace rangedam::toy
