#include "rangedam/dam.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rangedam/error.hpp"

namespace rangedam::dam {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

void SpeConfig::validate() const {
  if (d_model == 0) throw PreconditionError("SPE needs d_model >= 1");
  if (d >= d_model)
    throw PreconditionError("SPE dimension " + std::to_string(d) + " must be below d_model " + std::to_string(d_model));
  if (!(base > 0.0)) throw PreconditionError("SPE base must be positive");
}

std::vector<double> spe_vector(const SpeConfig& cfg) {
  cfg.validate();
  const double denom = std::pow(cfg.base, static_cast<double>(cfg.d) / static_cast<double>(cfg.d_model));
  std::vector<double> z(cfg.d_model);
  for (std::size_t pos = 0; pos < cfg.d_model; ++pos) {
    const double angle = static_cast<double>(pos) / denom;
    const bool odd = cfg.alternating ? (pos % 2 == 1) : (cfg.d % 2 == 1);
    z[pos] = odd ? std::cos(angle) : std::sin(angle);
  }
  return z;
}

template <typename Real>
std::vector<Real> spe_as(const SpeConfig& cfg) {
  const auto z = spe_vector(cfg);
  return std::vector<Real>(z.begin(), z.end());
}

std::size_t default_hidden(std::size_t channels) { return std::max<std::size_t>(1, channels / 4); }

template <typename Real>
void DamParams<Real>::validate() const {
  if (w1.shape.rank() != 2 || w2.shape.rank() != 2) throw ShapeError("DAM weights must be matrices");
  const std::size_t c = w1.shape[1], h = w1.shape[0];
  if (c == 0 || h == 0) throw ShapeError("DAM needs C >= 1 and hidden >= 1");
  if (w2.shape != Shape{c, h} || b1.shape != Shape{h} || b2.shape != Shape{c})
    throw ShapeError("DAM parameter shapes are inconsistent with W1 " + w1.shape.str());
  for (const auto* t : {&w1, &b1, &w2, &b2})
    for (Real v : t->data)
      if (!std::isfinite(v)) throw PreconditionError("DAM parameters must be finite");
  spe().validate();
}

template <typename Real>
DamParams<Real> zero_dam_params(std::size_t channels, std::size_t hidden, const DamConfig& config) {
  DamParams<Real> p;
  p.w1 = Tensor<Real>(Shape{hidden, channels});
  p.b1 = Tensor<Real>(Shape{hidden});
  p.w2 = Tensor<Real>(Shape{channels, hidden});
  p.b2 = Tensor<Real>(Shape{channels});
  p.config = config;
  p.validate();
  return p;
}

template <typename Real>
DamParams<Real> init_dam_params(std::size_t channels, std::size_t hidden, const DamConfig& config,
                                std::mt19937_64& rng) {
  DamParams<Real> p = zero_dam_params<Real>(channels, hidden, config);
  auto fill = [&rng](Tensor<Real>& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Real& v : t.data) v = static_cast<Real>(dist(rng));
  };
  fill(p.w1, channels);
  fill(p.w2, hidden);
  return p;
}

template <typename Real>
DamLeaves<Real> bind(Tape<Real>& tape, const DamParams<Real>& params, bool requires_grad) {
  return {tape.leaf(params.w1, requires_grad), tape.leaf(params.b1, requires_grad),
          tape.leaf(params.w2, requires_grad), tape.leaf(params.b2, requires_grad)};
}

template <typename Real>
Var<Real> shared_mlp(const Var<Real>& x, const DamLeaves<Real>& w, const DamConfig& config) {
  const std::size_t c = x.shape().numel(), h = w.w1.shape()[0];
  Var<Real> hidden = ad::matmul(w.w1, ad::reshape(x, Shape{c, 1}));
  if (config.use_bias) hidden = ad::add(hidden, ad::reshape(w.b1, Shape{h, 1}));
  if (config.activation == Activation::gelu) hidden = ad::gelu(hidden);
  Var<Real> out = ad::matmul(w.w2, hidden);
  if (config.use_bias) out = ad::add(out, ad::reshape(w.b2, Shape{c, 1}));
  return ad::reshape(out, Shape{c});
}

template <typename Real>
Var<Real> dam_scale(const Var<Real>& g, const Var<Real>& z, const DamLeaves<Real>& w, const DamConfig& config) {
  const std::size_t c = w.w1.shape()[1];
  if (g.shape() != Shape{c} || z.shape() != Shape{c})
    throw ShapeError("dam_scale: g " + g.shape().str() + " and z " + z.shape().str() + " must have " +
                     std::to_string(c) + " entries");
  return ad::sigmoid(ad::add(shared_mlp(g, w, config), shared_mlp(z, w, config)));
}

template <typename Real>
Var<Real> dam_forward(const Var<Real>& m, const DamLeaves<Real>& w, const DamConfig& config, std::span<const Real> spe) {
  if (m.shape().rank() != 3) throw ShapeError("dam_forward expects a C x H x W map, got " + m.shape().str());
  const std::size_t c = m.shape()[0];
  if (w.w1.shape()[1] != c) throw ShapeError("dam_forward: DAM width does not match " + m.shape().str());
  if (spe.size() != c) throw ShapeError("dam_forward: SPE vector length does not match channels");
  if (m.shape()[1] * m.shape()[2] == 0) throw DegenerateError("dam_forward over an empty spatial extent");

  Tape<Real>& tape = m.tape();
  const Var<Real> g = config.use_gap ? ad::global_avg_pool(m) : tape.constant(Tensor<Real>(Shape{c}));
  const Var<Real> z = tape.constant(config.use_spe ? Tensor<Real>(Shape{c}, std::vector<Real>(spe.begin(), spe.end()))
                                                   : Tensor<Real>(Shape{c}));
  return ad::scale_broadcast(m, dam_scale(g, z, w, config));
}

template <typename Real>
DepthAwareModule<Real>::DepthAwareModule(DamParams<Real> params) : params_(std::move(params)) {
  params_.validate();
  spe_ = spe_as<Real>(params_.spe());
}

template <typename Real>
Var<Real> DepthAwareModule<Real>::forward(const Var<Real>& m, const DamLeaves<Real>& w) const {
  return dam_forward(m, w, params_.config, std::span<const Real>(spe_));
}

template <typename Real>
Tensor<Real> DepthAwareModule<Real>::forward(const Tensor<Real>& m) const {
  Tape<Real> tape;
  const auto w = bind(tape, params_, false);
  return forward(tape.constant(m), w).value();
}

template <typename Real>
std::vector<Real> DepthAwareModule<Real>::scale(const Tensor<Real>& m) const {
  Tape<Real> tape;
  const auto w = bind(tape, params_, false);
  const Var<Real> mv = tape.constant(m);
  if (m.shape.rank() != 3) throw ShapeError("scale expects a C x H x W map");
  const std::size_t c = m.shape[0];
  const Var<Real> g = params_.config.use_gap ? ad::global_avg_pool(mv) : tape.constant(Tensor<Real>(Shape{c}));
  const Var<Real> z = tape.constant(params_.config.use_spe ? Tensor<Real>(Shape{c}, spe_) : Tensor<Real>(Shape{c}));
  return dam_scale(g, z, w, params_.config).value().data;
}

#define RANGEDAM_INSTANTIATE_DAM(R)                                                                    \
  template std::vector<R> spe_as<R>(const SpeConfig&);                                                 \
  template struct DamParams<R>;                                                                        \
  template DamParams<R> zero_dam_params<R>(std::size_t, std::size_t, const DamConfig&);                \
  template DamParams<R> init_dam_params<R>(std::size_t, std::size_t, const DamConfig&, std::mt19937_64&); \
  template DamLeaves<R> bind(Tape<R>&, const DamParams<R>&, bool);                                     \
  template Var<R> shared_mlp(const Var<R>&, const DamLeaves<R>&, const DamConfig&);                    \
  template Var<R> dam_scale(const Var<R>&, const Var<R>&, const DamLeaves<R>&, const DamConfig&);      \
  template Var<R> dam_forward(const Var<R>&, const DamLeaves<R>&, const DamConfig&, std::span<const R>); \
  template class DepthAwareModule<R>;

RANGEDAM_INSTANTIATE_DAM(float)
RANGEDAM_INSTANTIATE_DAM(double)

#undef RANGEDAM_INSTANTIATE_DAM

}  // namespace rangedam::dam
