#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cbnn/config.hpp"
#include "cbnn/data.hpp"
#include "cbnn/sem.hpp"

namespace cbnn {

// Synthetic retail survey following the two structural equations
//   AS = w_bd_as·BD + w_sm_as·SM + e1·ε
//   FP = w_as_fp·AS + w_sm_fp·SM + w_bd_fp·BD + e2·ε
// over standardized exogenous composites SM and BD.
struct GenConfig {
  std::size_t n = 500;
  double path_bd_as = 0.1;
  double path_sm_as = 0.5;
  double path_bd_fp = 0.1;
  double path_sm_fp = 0.5;
  double path_as_fp = 0.5;
  double e1 = 0.7;
  double e2 = 0.7;
  // Twelve categorical variables expanding to 39 one-hot columns.
  std::vector<std::size_t> bd_categories = {3, 3, 3, 3, 3, 3, 3, 3, 3, 4, 4, 4};
  std::size_t sm_items = 9;
  std::size_t as_items = 6;
  std::size_t fp_items = 5;
  // Ordinal steps per unit of node score, and per-item noise in score units.
  double item_scale = 1.5;
  double item_noise = 0.25;
  // Loading of each SM item on the shared SM factor.
  double sm_loading = 0.8;
  // Optional deletion of rows whose FP composite lies in [μ+σ, μ+2σ].
  bool missingness = false;
  double missing_probability = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
  static GenConfig from_config(const Config& cfg);  // reads [generator]
  Config to_config() const;
};

constexpr double kOrdinalMin = 1.0;
constexpr double kOrdinalMax = 9.0;
constexpr double kOrdinalMidpoint = 5.0;

DataMatrix simulate(const GenConfig& cfg);
// CSV whose comment block records the full GenConfig.
std::string simulate_csv(const GenConfig& cfg);

// The generating path model in standardized form (coefficients and
// residual variances as a fit on infinite, noise-free composites would see them).
PathModel generating_model(const GenConfig& cfg);

// DAG spec text matching the generator's column names (sales-plan variants).
std::string default_dag_spec();

}  // namespace cbnn
