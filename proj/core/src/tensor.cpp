#include "rangedam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>

#include "rangedam/error.hpp"

namespace rangedam::ad {

Shape::Shape(std::initializer_list<std::size_t> dims) {
  if (dims.size() == 0 || dims.size() > 3) throw ShapeError("tensor rank must be 1, 2 or 3");
  std::copy(dims.begin(), dims.end(), dims_.begin());
  rank_ = dims.size();
}

std::size_t Shape::numel() const noexcept {
  if (rank_ == 0) return 0;
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < rank_; ++i) os << (i ? ", " : "") << dims_[i];
  os << ')';
  return os.str();
}

template <typename Real>
Tensor<Real>::Tensor(Shape s, std::vector<Real> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.numel())
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " + shape.str());
}

template <typename Real>
Var<Real> Tape<Real>::leaf(Tensor<Real> value, bool requires_grad) {
  Node node;
  node.grad.assign(requires_grad ? value.numel() : 0, Real(0));
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::record(Tensor<Real> value, std::initializer_list<Var<Real>> inputs, Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw PreconditionError("op inputs belong to a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node node;
  node.grad.assign(needs ? value.numel() : 0, Real(0));
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
void Tape<Real>::accumulate(const Var<Real>& target, std::span<const Real> contribution) {
  Node& node = nodes_[target.id()];
  if (!node.requires_grad) return;
  for (std::size_t i = 0; i < contribution.size(); ++i) node.grad[i] += contribution[i];
}

template <typename Real>
std::span<Real> Tape<Real>::grad_buffer(const Var<Real>& target) {
  Node& node = nodes_[target.id()];
  return node.requires_grad ? std::span<Real>(node.grad) : std::span<Real>();
}

template <typename Real>
void Tape<Real>::backward(const Var<Real>& root) {
  if (&root.tape() != this) throw PreconditionError("backward root belongs to a different tape");
  if (nodes_[root.id()].value.numel() != 1) throw ShapeError("backward root must hold a single value");
  for (Node& node : nodes_) std::fill(node.grad.begin(), node.grad.end(), Real(0));
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad[0] = Real(1);
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward) continue;
    // Copy: the callback may accumulate into other nodes of the vector.
    const std::vector<Real> upstream = node.grad;
    node.backward(*this, upstream);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------

namespace {

template <typename Real>
void require_same_shape(const Var<Real>& a, const Var<Real>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape " + a.shape().str() + " vs " + b.shape().str());
}

template <typename Real>
void require_rank(const Var<Real>& a, std::size_t rank, const char* op) {
  if (a.shape().rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + a.shape().str());
}

}  // namespace

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape(a, b, "add");
  Tensor<Real> out(a.shape());
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Real>& t, std::span<const Real> up) {
    t.accumulate(a, up);
    t.accumulate(b, up);
  });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Real> out(a.shape());
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Real>& t, std::span<const Real> up) {
    const auto& x = a.value().data;
    const auto& y = b.value().data;
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * y[i];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i] * x[i];
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real k) {
  Tensor<Real> out(a.shape());
  const auto& x = a.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * k;
  return a.tape().record(std::move(out), {a}, [a, k](Tape<Real>& t, std::span<const Real> up) {
    auto ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * k;
  });
}

template <typename Real>
Var<Real> scale_broadcast(const Var<Real>& m, const Var<Real>& s) {
  require_rank(m, 3, "scale_broadcast");
  const std::size_t channels = m.shape()[0], plane = m.shape()[1] * m.shape()[2];
  if (s.shape().numel() != channels || s.shape().rank() != 1)
    throw ShapeError("scale_broadcast: scale " + s.shape().str() + " does not match channels of " + m.shape().str());
  Tensor<Real> out(m.shape());
  const auto& x = m.value().data;
  const auto& k = s.value().data;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = k[c] * x[c * plane + p];
  return m.tape().record(std::move(out), {m, s}, [m, s, channels, plane](Tape<Real>& t, std::span<const Real> up) {
    const auto& x = m.value().data;
    const auto& k = s.value().data;
    if (auto gm = t.grad_buffer(m); !gm.empty())
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < plane; ++p) gm[c * plane + p] += up[c * plane + p] * k[c];
    if (auto gs = t.grad_buffer(s); !gs.empty())
      for (std::size_t c = 0; c < channels; ++c) {
        Real acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += up[c * plane + p] * x[c * plane + p];
        gs[c] += acc;
      }
  });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& a, Shape shape) {
  if (shape.numel() != a.shape().numel())
    throw ShapeError("reshape: " + a.shape().str() + " to " + shape.str() + " changes element count");
  Tensor<Real> out(shape, a.value().data);
  return a.tape().record(std::move(out), {a}, [a](Tape<Real>& t, std::span<const Real> up) { t.accumulate(a, up); });
}

template <typename Real>
Var<Real> sum(const Var<Real>& a) {
  Real acc = 0;
  for (Real v : a.value().data) acc += v;
  return a.tape().record(Tensor<Real>::scalar(acc), {a}, [a](Tape<Real>& t, std::span<const Real> up) {
    auto ga = t.grad_buffer(a);
    for (Real& g : ga) g += up[0];
  });
}

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], n = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != n) throw ShapeError("matmul: inner dimensions " + a.shape().str() + " . " + b.shape().str());
  Tensor<Real> out(Shape{m, p});
  const auto& x = a.value().data;
  const auto& y = b.value().data;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      Real acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += x[i * n + k] * y[k * p + j];
      out[i * p + j] = acc;
    }
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, p](Tape<Real>& t, std::span<const Real> up) {
    const auto& x = a.value().data;
    const auto& y = b.value().data;
    // dA = dOut . B^T
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          Real acc = 0;
          for (std::size_t j = 0; j < p; ++j) acc += up[i * p + j] * y[k * p + j];
          ga[i * n + k] += acc;
        }
    // dB = A^T . dOut
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < p; ++j) {
          Real acc = 0;
          for (std::size_t i = 0; i < m; ++i) acc += x[i * n + k] * up[i * p + j];
          gb[k * p + j] += acc;
        }
  });
}

template <typename Real>
Var<Real> depthwise_conv7(const Var<Real>& m, const Var<Real>& kernel) {
  constexpr std::ptrdiff_t kSize = 7, kPad = 3;
  require_rank(m, 3, "depthwise_conv7");
  const std::size_t channels = m.shape()[0], height = m.shape()[1], width = m.shape()[2];
  if (kernel.shape() != Shape{channels, 7, 7})
    throw ShapeError("depthwise_conv7: kernel " + kernel.shape().str() + " is not " + std::to_string(channels) + "x7x7");
  if (height == 0 || width == 0) throw ShapeError("depthwise_conv7: empty spatial extent");

  const auto h = static_cast<std::ptrdiff_t>(height), w = static_cast<std::ptrdiff_t>(width);
  Tensor<Real> out(m.shape());
  const auto& x = m.value().data;
  const auto& k = kernel.value().data;
  for (std::size_t c = 0; c < channels; ++c) {
    const Real* src = x.data() + c * height * width;
    const Real* ker = k.data() + c * 49;
    Real* dst = out.data.data() + c * height * width;
    for (std::ptrdiff_t i = 0; i < h; ++i)
      for (std::ptrdiff_t j = 0; j < w; ++j) {
        Real acc = 0;
        for (std::ptrdiff_t di = 0; di < kSize; ++di) {
          const std::ptrdiff_t si = i + di - kPad;
          if (si < 0 || si >= h) continue;
          for (std::ptrdiff_t dj = 0; dj < kSize; ++dj) {
            const std::ptrdiff_t sj = j + dj - kPad;
            if (sj < 0 || sj >= w) continue;
            acc += ker[di * kSize + dj] * src[si * w + sj];
          }
        }
        dst[i * w + j] = acc;
      }
  }
  return m.tape().record(std::move(out), {m, kernel}, [m, kernel, channels, h, w](Tape<Real>& t, std::span<const Real> up) {
    const auto& x = m.value().data;
    const auto& k = kernel.value().data;
    auto gm = t.grad_buffer(m);
    auto gk = t.grad_buffer(kernel);
    const std::size_t plane = static_cast<std::size_t>(h * w);
    for (std::size_t c = 0; c < channels; ++c) {
      const Real* src = x.data() + c * plane;
      const Real* ker = k.data() + c * 49;
      const Real* dup = up.data() + c * plane;
      for (std::ptrdiff_t i = 0; i < h; ++i)
        for (std::ptrdiff_t j = 0; j < w; ++j) {
          const Real g = dup[i * w + j];
          for (std::ptrdiff_t di = 0; di < kSize; ++di) {
            const std::ptrdiff_t si = i + di - kPad;
            if (si < 0 || si >= h) continue;
            for (std::ptrdiff_t dj = 0; dj < kSize; ++dj) {
              const std::ptrdiff_t sj = j + dj - kPad;
              if (sj < 0 || sj >= w) continue;
              if (!gm.empty()) gm[c * plane + si * w + sj] += g * ker[di * kSize + dj];
              if (!gk.empty()) gk[c * 49 + di * kSize + dj] += g * src[si * w + sj];
            }
          }
        }
    }
  });
}

template <typename Real>
Var<Real> pointwise_conv(const Var<Real>& m, const Var<Real>& weight, const Var<Real>& bias) {
  require_rank(m, 3, "pointwise_conv");
  require_rank(weight, 2, "pointwise_conv");
  const std::size_t in_ch = m.shape()[0], plane = m.shape()[1] * m.shape()[2];
  const std::size_t out_ch = weight.shape()[0];
  if (weight.shape()[1] != in_ch)
    throw ShapeError("pointwise_conv: weight " + weight.shape().str() + " does not match input " + m.shape().str());
  if (bias.shape() != Shape{out_ch}) throw ShapeError("pointwise_conv: bias " + bias.shape().str());

  Tensor<Real> out(Shape{out_ch, m.shape()[1], m.shape()[2]});
  const auto& x = m.value().data;
  const auto& wt = weight.value().data;
  const auto& b = bias.value().data;
  for (std::size_t o = 0; o < out_ch; ++o) {
    Real* dst = out.data.data() + o * plane;
    std::fill(dst, dst + plane, b[o]);
    for (std::size_t c = 0; c < in_ch; ++c) {
      const Real wv = wt[o * in_ch + c];
      const Real* src = x.data() + c * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] += wv * src[p];
    }
  }
  return m.tape().record(std::move(out), {m, weight, bias},
                         [m, weight, bias, in_ch, out_ch, plane](Tape<Real>& t, std::span<const Real> up) {
                           const auto& x = m.value().data;
                           const auto& wt = weight.value().data;
                           if (auto gm = t.grad_buffer(m); !gm.empty())
                             for (std::size_t o = 0; o < out_ch; ++o)
                               for (std::size_t c = 0; c < in_ch; ++c) {
                                 const Real wv = wt[o * in_ch + c];
                                 for (std::size_t p = 0; p < plane; ++p) gm[c * plane + p] += wv * up[o * plane + p];
                               }
                           if (auto gw = t.grad_buffer(weight); !gw.empty())
                             for (std::size_t o = 0; o < out_ch; ++o)
                               for (std::size_t c = 0; c < in_ch; ++c) {
                                 Real acc = 0;
                                 for (std::size_t p = 0; p < plane; ++p) acc += up[o * plane + p] * x[c * plane + p];
                                 gw[o * in_ch + c] += acc;
                               }
                           if (auto gb = t.grad_buffer(bias); !gb.empty())
                             for (std::size_t o = 0; o < out_ch; ++o) {
                               Real acc = 0;
                               for (std::size_t p = 0; p < plane; ++p) acc += up[o * plane + p];
                               gb[o] += acc;
                             }
                         });
}

template <typename Real>
Var<Real> patch_merge2x2(const Var<Real>& m, const Var<Real>& weight, const Var<Real>& bias) {
  require_rank(m, 3, "patch_merge2x2");
  require_rank(weight, 2, "patch_merge2x2");
  const std::size_t in_ch = m.shape()[0], height = m.shape()[1], width = m.shape()[2];
  if (height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0)
    throw ShapeError("patch_merge2x2: spatial extent " + m.shape().str() + " must be even and non-empty");
  const std::size_t out_ch = weight.shape()[0], patch = 4 * in_ch;
  if (weight.shape()[1] != patch) throw ShapeError("patch_merge2x2: weight " + weight.shape().str());
  if (bias.shape() != Shape{out_ch}) throw ShapeError("patch_merge2x2: bias " + bias.shape().str());
  const std::size_t oh = height / 2, ow = width / 2;

  // Column index into W for input (c, di, dj) is c*4 + di*2 + dj.
  Tensor<Real> out(Shape{out_ch, oh, ow});
  const auto& x = m.value().data;
  const auto& wt = weight.value().data;
  const auto& b = bias.value().data;
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        Real acc = b[o];
        for (std::size_t c = 0; c < in_ch; ++c)
          for (std::size_t di = 0; di < 2; ++di)
            for (std::size_t dj = 0; dj < 2; ++dj)
              acc += wt[o * patch + c * 4 + di * 2 + dj] * x[(c * height + 2 * i + di) * width + 2 * j + dj];
        out[(o * oh + i) * ow + j] = acc;
      }
  return m.tape().record(
      std::move(out), {m, weight, bias},
      [m, weight, bias, in_ch, out_ch, height, width, oh, ow, patch](Tape<Real>& t, std::span<const Real> up) {
        const auto& x = m.value().data;
        const auto& wt = weight.value().data;
        auto gm = t.grad_buffer(m);
        auto gw = t.grad_buffer(weight);
        auto gb = t.grad_buffer(bias);
        for (std::size_t o = 0; o < out_ch; ++o)
          for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
              const Real g = up[(o * oh + i) * ow + j];
              if (!gb.empty()) gb[o] += g;
              for (std::size_t c = 0; c < in_ch; ++c)
                for (std::size_t di = 0; di < 2; ++di)
                  for (std::size_t dj = 0; dj < 2; ++dj) {
                    const std::size_t xi = (c * height + 2 * i + di) * width + 2 * j + dj;
                    const std::size_t wi = o * patch + c * 4 + di * 2 + dj;
                    if (!gm.empty()) gm[xi] += g * wt[wi];
                    if (!gw.empty()) gw[wi] += g * x[xi];
                  }
            }
      });
}

template <typename Real>
Var<Real> upsample_nearest2x(const Var<Real>& m) {
  require_rank(m, 3, "upsample_nearest2x");
  const std::size_t channels = m.shape()[0], height = m.shape()[1], width = m.shape()[2];
  const std::size_t oh = 2 * height, ow = 2 * width;
  Tensor<Real> out(Shape{channels, oh, ow});
  const auto& x = m.value().data;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) out[(c * oh + i) * ow + j] = x[(c * height + i / 2) * width + j / 2];
  return m.tape().record(std::move(out), {m}, [m, channels, height, width, oh, ow](Tape<Real>& t, std::span<const Real> up) {
    auto gm = t.grad_buffer(m);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) gm[(c * height + i / 2) * width + j / 2] += up[(c * oh + i) * ow + j];
  });
}

template <typename Real>
Real gelu_value(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x / std::numbers::sqrt2_v<Real>));
}

template <typename Real>
Real sigmoid_value(Real x) {
  // Split by sign so exp never overflows.
  if (x >= Real(0)) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
Var<Real> gelu(const Var<Real>& x) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = gelu_value(v[i]);
  return x.tape().record(std::move(out), {x}, [x](Tape<Real>& t, std::span<const Real> up) {
    const auto& v = x.value().data;
    auto gx = t.grad_buffer(x);
    const Real inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<Real> / std::numbers::sqrt2_v<Real>;
    for (std::size_t i = 0; i < up.size(); ++i) {
      const Real cdf = Real(0.5) * (Real(1) + std::erf(v[i] / std::numbers::sqrt2_v<Real>));
      const Real pdf = inv_sqrt_2pi * std::exp(Real(-0.5) * v[i] * v[i]);
      gx[i] += up[i] * (cdf + v[i] * pdf);
    }
  });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sigmoid_value(v[i]);
  std::vector<Real> saved = out.data;
  return x.tape().record(std::move(out), {x}, [x, saved = std::move(saved)](Tape<Real>& t, std::span<const Real> up) {
    auto gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * saved[i] * (Real(1) - saved[i]);
  });
}

template <typename Real>
Var<Real> layer_norm(const Var<Real>& m, const Var<Real>& gamma, const Var<Real>& beta, Real eps) {
  require_rank(m, 3, "layer_norm");
  const std::size_t channels = m.shape()[0], plane = m.shape()[1] * m.shape()[2];
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})
    throw ShapeError("layer_norm: affine parameters must have " + std::to_string(channels) + " entries");

  // Saved per pixel: normalized values and 1/sigma.
  std::vector<Real> xhat(m.shape().numel());
  std::vector<Real> inv_std(plane);
  const auto& x = m.value().data;
  const auto& g = gamma.value().data;
  const auto& b = beta.value().data;
  Tensor<Real> out(m.shape());
  for (std::size_t p = 0; p < plane; ++p) {
    Real mean = 0;
    for (std::size_t c = 0; c < channels; ++c) mean += x[c * plane + p];
    mean /= Real(channels);
    Real var = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const Real d = x[c * plane + p] - mean;
      var += d * d;
    }
    var /= Real(channels);
    inv_std[p] = Real(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t idx = c * plane + p;
      xhat[idx] = (x[idx] - mean) * inv_std[p];
      out[idx] = g[c] * xhat[idx] + b[c];
    }
  }
  return m.tape().record(
      std::move(out), {m, gamma, beta},
      [m, gamma, beta, channels, plane, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<Real>& t, std::span<const Real> up) {
        const auto& g = gamma.value().data;
        if (auto gg = t.grad_buffer(gamma); !gg.empty())
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < plane; ++p) gg[c] += up[c * plane + p] * xhat[c * plane + p];
        if (auto gb = t.grad_buffer(beta); !gb.empty())
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t p = 0; p < plane; ++p) gb[c] += up[c * plane + p];
        auto gm = t.grad_buffer(m);
        if (gm.empty()) return;
        const Real n = Real(channels);
        for (std::size_t p = 0; p < plane; ++p) {
          // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
          Real mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t idx = c * plane + p;
            const Real d = up[idx] * g[c];
            mean_d += d;
            mean_dx += d * xhat[idx];
          }
          mean_d /= n;
          mean_dx /= n;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t idx = c * plane + p;
            gm[idx] += inv_std[p] * (up[idx] * g[c] - mean_d - xhat[idx] * mean_dx);
          }
        }
      });
}

template <typename Real>
Var<Real> global_avg_pool(const Var<Real>& m) {
  require_rank(m, 3, "global_avg_pool");
  const std::size_t channels = m.shape()[0], plane = m.shape()[1] * m.shape()[2];
  if (plane == 0) throw DegenerateError("global_avg_pool over an empty spatial extent");
  Tensor<Real> out(Shape{channels});
  const auto& x = m.value().data;
  const Real inv = Real(1) / Real(plane);
  for (std::size_t c = 0; c < channels; ++c) {
    Real acc = 0;
    for (std::size_t p = 0; p < plane; ++p) acc += x[c * plane + p];
    out[c] = acc * inv;
  }
  return m.tape().record(std::move(out), {m}, [m, channels, plane, inv](Tape<Real>& t, std::span<const Real> up) {
    auto gm = t.grad_buffer(m);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) gm[c * plane + p] += up[c] * inv;
  });
}

namespace {

// log-sum-exp and softmax of a strided column of logits.
template <typename Real>
Real log_softmax_at(const Real* logits, std::size_t count, std::size_t stride, std::size_t target, Real* probs) {
  Real peak = logits[0];
  for (std::size_t k = 1; k < count; ++k) peak = std::max(peak, logits[k * stride]);
  Real denom = 0;
  for (std::size_t k = 0; k < count; ++k) {
    probs[k] = std::exp(logits[k * stride] - peak);
    denom += probs[k];
  }
  for (std::size_t k = 0; k < count; ++k) probs[k] /= denom;
  return logits[target * stride] - peak - std::log(denom);
}

}  // namespace

template <typename Real>
Var<Real> softmax_cross_entropy(const Var<Real>& logits, std::size_t target) {
  require_rank(logits, 1, "softmax_cross_entropy");
  const std::size_t count = logits.shape()[0];
  if (count < 2) throw ShapeError("softmax_cross_entropy needs at least two classes");
  if (target >= count)
    throw PreconditionError("softmax_cross_entropy: target " + std::to_string(target) + " >= " + std::to_string(count));
  std::vector<Real> probs(count);
  const Real loss = -log_softmax_at(logits.value().data.data(), count, 1, target, probs.data());
  return logits.tape().record(Tensor<Real>::scalar(loss), {logits},
                              [logits, target, probs = std::move(probs)](Tape<Real>& t, std::span<const Real> up) {
                                auto g = t.grad_buffer(logits);
                                for (std::size_t k = 0; k < probs.size(); ++k)
                                  g[k] += up[0] * (probs[k] - (k == target ? Real(1) : Real(0)));
                              });
}

template <typename Real>
Var<Real> pixel_cross_entropy(const Var<Real>& logits, std::span<const std::uint16_t> labels, std::uint16_t ignore) {
  require_rank(logits, 3, "pixel_cross_entropy");
  const std::size_t count = logits.shape()[0], plane = logits.shape()[1] * logits.shape()[2];
  if (count < 2) throw ShapeError("pixel_cross_entropy needs at least two classes");
  if (labels.size() != plane) throw ShapeError("pixel_cross_entropy: label count does not match logits plane");

  std::vector<Real> probs(count * plane, Real(0));
  std::vector<std::uint16_t> targets(labels.begin(), labels.end());
  std::vector<Real> column(count);
  const auto& x = logits.value().data;
  Real total = 0;
  std::size_t scored = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    if (labels[p] == ignore) continue;
    if (labels[p] >= count)
      throw PreconditionError("pixel_cross_entropy: label " + std::to_string(labels[p]) + " >= class count");
    total -= log_softmax_at(x.data() + p, count, plane, labels[p], column.data());
    for (std::size_t k = 0; k < count; ++k) probs[k * plane + p] = column[k];
    ++scored;
  }
  const Real inv = scored ? Real(1) / Real(scored) : Real(0);
  return logits.tape().record(
      Tensor<Real>::scalar(total * inv), {logits},
      [logits, count, plane, inv, ignore, probs = std::move(probs), targets = std::move(targets)](
          Tape<Real>& t, std::span<const Real> up) {
        auto g = t.grad_buffer(logits);
        const Real scale = up[0] * inv;
        for (std::size_t p = 0; p < plane; ++p) {
          if (targets[p] == ignore) continue;
          for (std::size_t k = 0; k < count; ++k)
            g[k * plane + p] += scale * (probs[k * plane + p] - (k == targets[p] ? Real(1) : Real(0)));
        }
      });
}

#define RANGEDAM_INSTANTIATE_OPS(R)                                                                 \
  template Var<R> add(const Var<R>&, const Var<R>&);                                                \
  template Var<R> mul(const Var<R>&, const Var<R>&);                                                \
  template Var<R> scale(const Var<R>&, R);                                                          \
  template Var<R> scale_broadcast(const Var<R>&, const Var<R>&);                                    \
  template Var<R> reshape(const Var<R>&, Shape);                                                    \
  template Var<R> sum(const Var<R>&);                                                               \
  template Var<R> matmul(const Var<R>&, const Var<R>&);                                             \
  template Var<R> depthwise_conv7(const Var<R>&, const Var<R>&);                                    \
  template Var<R> pointwise_conv(const Var<R>&, const Var<R>&, const Var<R>&);                      \
  template Var<R> patch_merge2x2(const Var<R>&, const Var<R>&, const Var<R>&);                      \
  template Var<R> upsample_nearest2x(const Var<R>&);                                                \
  template Var<R> gelu(const Var<R>&);                                                              \
  template Var<R> sigmoid(const Var<R>&);                                                           \
  template Var<R> layer_norm(const Var<R>&, const Var<R>&, const Var<R>&, R);                       \
  template Var<R> global_avg_pool(const Var<R>&);                                                   \
  template Var<R> softmax_cross_entropy(const Var<R>&, std::size_t);                                \
  template Var<R> pixel_cross_entropy(const Var<R>&, std::span<const std::uint16_t>, std::uint16_t); \
  template R gelu_value(R);                                                                         \
  template R sigmoid_value(R);

RANGEDAM_INSTANTIATE_OPS(float)
RANGEDAM_INSTANTIATE_OPS(double)

#undef RANGEDAM_INSTANTIATE_OPS

}  // namespace rangedam::ad
