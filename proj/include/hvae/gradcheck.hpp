#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hvae/graph.hpp"

namespace hvae::nn {

struct GradCheckOptions {
  double eps = 1e-4;
  /// Coordinates checked per tensor; 0 checks all of them, otherwise a
  /// seeded random subset of this size.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error, so coordinates whose true
  /// gradient is ~0 are judged by absolute error instead.
  double abs_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
  std::string worst;  ///< "tensor[index]" of the largest relative error
  bool passed = false;
};

/// Builds a scalar on a fresh graph from parameter leaves (in order).
using ScalarFn = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients against central finite differences, both
/// evaluated in 64-bit arithmetic. rel = |ad - fd| / max(|ad|, |fd|, abs_floor).
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& params, double tol,
                           const GradCheckOptions& opts = {});

}  // namespace hvae::nn
