#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rangedam/tensor.hpp"

namespace rangedam::ad {

/// Builds a single-element loss from one leaf per checked input.
using LossFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Denominator floor of the relative error, so entries whose true gradient
  /// is ~0 are judged on absolute error.
  double floor = 1e-3;
  /// Check at most this many randomly chosen coordinates per input (all when
  /// unset).
  std::optional<std::size_t> max_coords_per_input;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor)
double relative_error(double analytic, double numeric, double floor);

/// Compares tape gradients of `loss` against central finite differences
/// (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate.
GradCheckResult gradcheck(const LossFn& loss, std::span<const Tensor<double>> inputs,
                          const GradCheckOptions& options = {});

}  // namespace rangedam::ad
