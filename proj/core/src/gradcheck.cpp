#include "rangedam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "rangedam/error.hpp"

namespace rangedam::ad {
namespace {

double evaluate(const LossFn& loss, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.constant(t));
  const Var<double> out = loss(tape, leaves);
  if (out.value().numel() != 1) throw ShapeError("gradcheck loss must be a single value");
  return out.value()[0];
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) return std::numeric_limits<double>::infinity();
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck(const LossFn& loss, std::span<const Tensor<double>> inputs, const GradCheckOptions& options) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const Var<double> out = loss(tape, leaves);
  tape.backward(out);

  std::vector<Tensor<double>> work(inputs.begin(), inputs.end());
  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < work.size(); ++k) {
    std::vector<std::size_t> coords(work[k].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input && coords.size() > *options.max_coords_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(*options.max_coords_per_input);
    }
    const auto analytic = leaves[k].grad();
    for (std::size_t i : coords) {
      const double original = work[k][i];
      work[k][i] = original + options.eps;
      const double plus = evaluate(loss, work);
      work[k][i] = original - options.eps;
      const double minus = evaluate(loss, work);
      work[k][i] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      result.max_rel_err = std::max(result.max_rel_err, relative_error(analytic[i], numeric, options.floor));
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace rangedam::ad
