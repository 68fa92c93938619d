#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <deque>
#include <vector>

namespace rangedam::ad {

/// Rank 1..3 extent. Rank-3 tensors are (C, H, W); matrices are (rows, cols).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);

  std::size_t rank() const noexcept { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const noexcept;
  std::span<const std::size_t> dims() const noexcept { return {dims_.data(), rank_}; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::array<std::size_t, 3> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major array. Plain value type; gradients live on the tape.
template <typename Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<Real> values);
  explicit Tensor(Shape s) : shape(s), data(s.numel(), Real(0)) {}

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor filled(Shape s, Real value) {
    Tensor t(s);
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }
  static Tensor scalar(Real value) { return Tensor(Shape{1}, {value}); }

  std::size_t numel() const noexcept { return data.size(); }
  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  return Tensor<To>(t.shape, std::vector<To>(t.data.begin(), t.data.end()));
}

template <typename Real>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Real>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape; }
  /// Gradient accumulated by the last backward pass; zeros before that.
  std::span<const Real> grad() const;
  bool requires_grad() const;

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records executed ops and replays their vector-Jacobian products in exact
/// reverse order. Leaves accumulate gradient from every use.
template <typename Real>
class Tape {
 public:
  /// Receives the upstream gradient of the node; pushes contributions into
  /// its inputs with `accumulate`.
  using Backward = std::function<void(Tape&, std::span<const Real> upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> leaf(Tensor<Real> value, bool requires_grad = true);
  Var<Real> constant(Tensor<Real> value) { return leaf(std::move(value), false); }

  /// Op-author API: appends a node computed from `inputs`. The node needs a
  /// gradient iff any input does; `backward` is dropped otherwise.
  Var<Real> record(Tensor<Real> value, std::initializer_list<Var<Real>> inputs, Backward backward);

  /// Adds `contribution` into the gradient of `target` (no-op for nodes that
  /// do not require grad).
  void accumulate(const Var<Real>& target, std::span<const Real> contribution);
  /// Mutable gradient buffer of `target`, or an empty span when it needs none.
  std::span<Real> grad_buffer(const Var<Real>& target);

  /// Seeds d(root)/d(root) = 1 for a single-element root and runs every
  /// recorded VJP in reverse. Clears gradients from earlier passes.
  void backward(const Var<Real>& root);

  const Tensor<Real>& value(std::size_t id) const { return nodes_[id].value; }
  std::span<const Real> grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;  // references survive growth
};

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape_->value(id_);
}
template <typename Real>
std::span<const Real> Var<Real>::grad() const {
  return tape_->grad(id_);
}
template <typename Real>
bool Var<Real>::requires_grad() const {
  return tape_->requires_grad(id_);
}

// ---------------------------------------------------------------------------
// Differentiable ops. Every op validates shapes (ShapeError) and never
// mutates its inputs.

/// Elementwise sum / product of equally shaped tensors.
template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b);
template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b);
/// a * k for a constant k.
template <typename Real>
Var<Real> scale(const Var<Real>& a, Real k);
/// out[k,i,j] = s[k] * M[k,i,j]
template <typename Real>
Var<Real> scale_broadcast(const Var<Real>& m, const Var<Real>& s);
/// Same data, new shape of equal element count.
template <typename Real>
Var<Real> reshape(const Var<Real>& a, Shape shape);
/// Sum of all elements as a rank-1 single-element tensor.
template <typename Real>
Var<Real> sum(const Var<Real>& a);

/// (m x n) . (n x p)
template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b);

/// Per-channel 7x7 cross-correlation, stride 1, zero padding 3. K is C x 7 x 7.
template <typename Real>
Var<Real> depthwise_conv7(const Var<Real>& m, const Var<Real>& kernel);
/// out[o,i,j] = sum_c W[o,c] M[c,i,j] + b[o]. W is C' x C, b has C' entries.
template <typename Real>
Var<Real> pointwise_conv(const Var<Real>& m, const Var<Real>& weight, const Var<Real>& bias);
/// Non-overlapping 2x2 patches mapped through W (C' x 4C) plus b; halves H and W.
/// Patch vector layout is (c, di, dj) with di, dj in {0, 1}.
template <typename Real>
Var<Real> patch_merge2x2(const Var<Real>& m, const Var<Real>& weight, const Var<Real>& bias);
/// Nearest-neighbour 2x upsampling of a C x H x W map.
template <typename Real>
Var<Real> upsample_nearest2x(const Var<Real>& m);

/// Exact form 0.5 x (1 + erf(x / sqrt 2)).
template <typename Real>
Var<Real> gelu(const Var<Real>& x);
template <typename Real>
Var<Real> sigmoid(const Var<Real>& x);
/// Normalizes over the channel dimension at every pixel, then applies
/// per-channel gamma and beta (channels-first layer norm).
template <typename Real>
Var<Real> layer_norm(const Var<Real>& m, const Var<Real>& gamma, const Var<Real>& beta, Real eps = Real(1e-6));
/// g[k] = mean over (i, j) of M[k, i, j]. Throws DegenerateError when H*W = 0.
template <typename Real>
Var<Real> global_avg_pool(const Var<Real>& m);

/// -log softmax(logits)[target] for a K-vector of logits, K >= 2.
template <typename Real>
Var<Real> softmax_cross_entropy(const Var<Real>& logits, std::size_t target);
/// Mean per-pixel cross entropy of K x H x W logits against H x W labels;
/// pixels labelled `ignore` are skipped. Zero when every pixel is ignored.
template <typename Real>
Var<Real> pixel_cross_entropy(const Var<Real>& logits, std::span<const std::uint16_t> labels,
                              std::uint16_t ignore);

// Scalar activation values.
template <typename Real>
Real gelu_value(Real x);
template <typename Real>
Real sigmoid_value(Real x);

}  // namespace rangedam::ad
