#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "rangedam/tensor.hpp"

/// Depth-aware channel recalibration:
///
///   z = SPE over channel positions          (fixed, no gradient)
///   g = GAP(M)
///   s = sigmoid(MLP(g) + MLP(z))            (one MLP, shared weights)
///   M'[k] = s[k] * M[k]
///
/// A disabled branch feeds zeros through the MLP instead of being dropped,
/// so the sum always holds both bias paths.
namespace rangedam::dam {

enum class Activation { gelu, identity };

struct SpeConfig {
  std::size_t d = 0;        ///< fixed dimension index
  std::size_t d_model = 0;  ///< equals the channel count C
  double base = 10000.0;
  /// Off: the sin/cos choice follows the parity of d for the whole vector.
  /// On: it alternates with the position instead (transformer layout).
  bool alternating = false;

  void validate() const;
};

/// z[pos] = sin(pos / base^(d / d_model)) for even d, cos(...) for odd d,
/// pos = 0 .. d_model - 1.
std::vector<double> spe_vector(const SpeConfig& cfg);

struct DamConfig {
  bool use_gap = true;
  bool use_spe = true;
  bool use_bias = true;
  Activation activation = Activation::gelu;
  std::size_t spe_dim = 0;
  bool spe_alternating = false;
};

template <typename Real>
struct DamParams {
  ad::Tensor<Real> w1;  ///< hidden x C
  ad::Tensor<Real> b1;  ///< hidden
  ad::Tensor<Real> w2;  ///< C x hidden
  ad::Tensor<Real> b2;  ///< C
  DamConfig config;

  std::size_t channels() const { return w1.shape[1]; }
  std::size_t hidden() const { return w1.shape[0]; }
  /// Throws ShapeError on inconsistent weights, PreconditionError on
  /// non-finite values or an out-of-range SPE dimension.
  void validate() const;
  SpeConfig spe() const { return {config.spe_dim, channels(), 10000.0, config.spe_alternating}; }
};

/// Default hidden width C / 4 (at least 1).
std::size_t default_hidden(std::size_t channels);

/// W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
template <typename Real>
DamParams<Real> init_dam_params(std::size_t channels, std::size_t hidden, const DamConfig& config,
                                std::mt19937_64& rng);

/// All weights and biases zero.
template <typename Real>
DamParams<Real> zero_dam_params(std::size_t channels, std::size_t hidden, const DamConfig& config);

/// Learnable tensors bound to a tape.
template <typename Real>
struct DamLeaves {
  ad::Var<Real> w1, b1, w2, b2;
};

template <typename Real>
DamLeaves<Real> bind(ad::Tape<Real>& tape, const DamParams<Real>& params, bool requires_grad = true);

/// MLP(x) = W2 act(W1 x + b1) + b2 for a C-vector x.
template <typename Real>
ad::Var<Real> shared_mlp(const ad::Var<Real>& x, const DamLeaves<Real>& w, const DamConfig& config);

/// s = sigmoid(MLP(g) + MLP(z)).
template <typename Real>
ad::Var<Real> dam_scale(const ad::Var<Real>& g, const ad::Var<Real>& z, const DamLeaves<Real>& w,
                        const DamConfig& config);

/// M' = s * M per channel. `spe` is the cached SPE vector (length C).
template <typename Real>
ad::Var<Real> dam_forward(const ad::Var<Real>& m, const DamLeaves<Real>& w, const DamConfig& config,
                          std::span<const Real> spe);

/// Owns parameters plus the SPE vector, computed once at construction.
template <typename Real>
class DepthAwareModule {
 public:
  explicit DepthAwareModule(DamParams<Real> params);

  const DamParams<Real>& params() const noexcept { return params_; }
  std::span<const Real> spe() const noexcept { return spe_; }

  ad::Var<Real> forward(const ad::Var<Real>& m, const DamLeaves<Real>& w) const;

  /// Untracked evaluation.
  ad::Tensor<Real> forward(const ad::Tensor<Real>& m) const;
  /// The channel scale s for a feature map.
  std::vector<Real> scale(const ad::Tensor<Real>& m) const;

 private:
  DamParams<Real> params_;
  std::vector<Real> spe_;
};

/// Spe vector converted to the working precision.
template <typename Real>
std::vector<Real> spe_as(const SpeConfig& cfg);

}  // namespace rangedam::dam
