#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "cbnn/layers.hpp"

namespace cbnn {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error, so parameters with
  // near-zero gradients are judged on absolute error.
  double abs_floor = 1e-6;
  double tolerance = 1e-5;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool ok = true;
};

// `loss` must be deterministic (replay any Rng from a saved copy).
// `backprop` must zero and then fill every parameter's grad at the current values.
GradCheckReport grad_check(const std::function<double()>& loss,
                           const std::function<void()>& backprop, const ParameterList& params,
                           const GradCheckOptions& options = {});

}  // namespace cbnn
