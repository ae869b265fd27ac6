#pragma once

#include <cstddef>
#include <vector>

#include "cbnn/layers.hpp"
#include "cbnn/rng.hpp"

namespace cbnn {

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list; reads Parameter::grad.
class Adam {
 public:
  Adam(ParameterList params, AdamConfig cfg);

  // Throws NumericError on a non-finite gradient, leaving parameters untouched.
  void step();
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const ParameterList& parameters() const { return params_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  ParameterList params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t t_ = 0;
};

struct VadamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t n_train = 1;       // N
  double lambda_prior = 0.1;     // prior precision λ; λ̃ = λ / N
  std::size_t mc_samples = 1;
  bool perturb = true;           // false turns perturb() into a no-op

  double lambda_tilde() const { return lambda_prior / static_cast<double>(n_train); }
};

// Variational Adam: Parameter::value holds the posterior mean between steps.
// perturb() swaps in a weight sample w = μ + ε/√(N·(v̂ + λ̃)); step()
// restores μ, then applies the update using the gradient taken at the sample.
class Vadam {
 public:
  Vadam(ParameterList params, VadamConfig cfg);

  void perturb(Rng& rng);
  // Restores μ if a sample is active; harmless otherwise.
  void restore();
  void step();

  bool perturbed() const { return perturbed_; }
  std::size_t steps() const { return t_; }
  const VadamConfig& config() const { return cfg_; }
  const ParameterList& parameters() const { return params_; }
  // Posterior std of parameter k, element i, under the current state.
  double posterior_std(std::size_t k, std::size_t i) const;

 private:
  double corrected_second_moment(std::size_t k, std::size_t i) const;

  ParameterList params_;
  VadamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::vector<Matrix> means_;
  std::size_t t_ = 0;
  bool perturbed_ = false;
};

}  // namespace cbnn
