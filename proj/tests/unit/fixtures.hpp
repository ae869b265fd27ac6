#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "cbnn/chevron.hpp"
#include "cbnn/sem.hpp"
#include "cbnn/synth.hpp"

namespace cbnn::testing {

struct SmallProblem {
  NetworkData data;
  PathModel model;
};

// First n rows of a synthetic survey as network inputs, plus paths fitted on
// at least 200 rows so that every one-hot column varies.
inline SmallProblem small_problem(std::size_t n, std::uint64_t seed = 1) {
  GenConfig cfg;
  cfg.n = std::max<std::size_t>(n, 200);
  cfg.seed = seed;
  DataMatrix raw = simulate(cfg);
  const MeasurementSpec spec = parse_measurement_spec(Config::parse(default_dag_spec()), raw);
  apply_measurement_spec(spec, raw);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return {network_data(raw, spec).subset(rows), fit_paths(raw, spec)};
}

}  // namespace cbnn::testing
