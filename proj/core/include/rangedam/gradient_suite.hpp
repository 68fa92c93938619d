#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rangedam/gradcheck.hpp"

namespace rangedam::ad {

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

struct SuiteOptions {
  std::uint64_t first_seed = 0;
  std::size_t seeds = 1;
  GradCheckOptions check;
  /// Coordinates sampled per parameter tensor for the multi-stage model
  /// (everything else is checked exhaustively).
  std::size_t model_coords_per_tensor = 6;
};

/// Finite-difference check of every differentiable op and of the composed
/// DAM, both block kinds and a 2-stage model, on random shapes and values
/// drawn from each seed. One entry per check, holding the worst error over
/// all seeds.
std::vector<SuiteEntry> run_gradient_suite(const SuiteOptions& options);

}  // namespace rangedam::ad
