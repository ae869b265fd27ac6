#pragma once

#include <span>
#include <string>
#include <vector>

#include "cbnn/layers.hpp"

namespace cbnn {

// Mean-field Gaussian posterior over a dense weight matrix. The bias is a
// point estimate and carries no KL term.
struct FlipoutParams {
  Matrix w_mean;  // I×O
  Matrix w_rho;   // I×O, scale = softplus(rho)
  Matrix bias;    // 1×O
  double prior_scale = 1.0;

  void validate() const;
};

struct FlipoutGrads {
  Matrix w_mean;
  Matrix w_rho;
  Matrix bias;
};

struct FlipoutTape {
  Matrix input;
  Matrix sign_in;    // B×I Rademacher
  Matrix sign_out;   // B×O Rademacher
  Matrix noise;      // I×O shared Gaussian base perturbation
  Matrix sigma;      // I×O
  Mode mode = Mode::mean_only;
  bool filled = false;
};

constexpr double kInitialPosteriorScale = 0.05;

// Stochastic: x·W_mean + ((x∘S_in)·(σ∘E))∘S_out + b. Mean-only: x·W_mean + b.
Matrix flipout_forward(const Matrix& x, const Matrix& w_mean, const Matrix& w_rho,
                       const Matrix& bias, Rng& rng, Mode mode, FlipoutTape& tape);
Matrix flipout_forward(const Matrix& x, const FlipoutParams& p, Rng& rng, Mode mode,
                       FlipoutTape& tape);
// Accumulates parameter gradients; returns ∂/∂x.
Matrix flipout_backward(const FlipoutTape& tape, const Matrix& grad_out, const Matrix& w_mean,
                        const Matrix& w_rho, Matrix& d_mean, Matrix& d_rho, Matrix& d_bias);

// Σ KL(N(μ, σ²) ‖ N(0, prior²)) over all weights.
double flipout_kl(const Matrix& w_mean, const Matrix& w_rho, double prior_scale);
double flipout_kl(const FlipoutParams& p);
void accumulate_flipout_kl_grad(const Matrix& w_mean, const Matrix& w_rho, double prior_scale,
                                double scale, Matrix& d_mean, Matrix& d_rho);

// Closed-form KL between two univariate Gaussians.
double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p);

class FlipoutLayer final : public Layer {
 public:
  FlipoutLayer(std::string name, std::size_t in, std::size_t out, Rng& init_rng,
               double prior_scale = 1.0);

  Matrix forward(const Matrix& x, Rng& rng, Mode mode) override;
  Matrix backward(const Matrix& grad_out) override;
  ParameterList parameters() override { return {&mean_, &rho_, &bias_}; }
  std::size_t in_features() const override { return mean_.value.rows(); }
  std::size_t out_features() const override { return mean_.value.cols(); }
  double kl() const override;
  void accumulate_kl_grad(double scale) override;

  Parameter& weight_mean() { return mean_; }
  Parameter& weight_rho() { return rho_; }
  Parameter& bias() { return bias_; }
  double prior_scale() const { return prior_scale_; }
  FlipoutParams snapshot() const;

 private:
  Parameter mean_;
  Parameter rho_;
  Parameter bias_;
  double prior_scale_;
  FlipoutTape tape_;

  // σ, log σ and sigmoid(ρ), recomputed only when ρ changes.
  void refresh() const;
  mutable Matrix cached_rho_;
  mutable Matrix sigma_;
  mutable Matrix log_sigma_;
  mutable Matrix rho_sigmoid_;
  mutable bool cache_valid_ = false;
};

// ---- non-negative Gaussian output head -------------------------------------

constexpr double kHeadStdFloor = 1e-3;

// mean = softplus(t + offset_mean); std = floor + softplus(alpha·t + offset_scale)
struct GaussianHead {
  double offset_mean = 0.0;
  double offset_scale = 0.0;
  double alpha = 0.05;

  // Offsets chosen so that t = 0 yields the requested mean and std.
  static GaussianHead centered(double mean_at_zero = 25.0, double std_at_zero = 1.0,
                               double alpha = 0.05);
};

struct GaussianMoments {
  std::vector<double> mean;
  std::vector<double> std;
};

// t is B×1.
GaussianMoments gaussian_head(const Matrix& t, const GaussianHead& head);

// Learnable offsets; alpha stays fixed.
class GaussianHeadLayer {
 public:
  GaussianHeadLayer(std::string name, const GaussianHead& init);

  GaussianMoments forward(const Matrix& t);
  // Accumulates offset gradients; returns ∂/∂t (B×1).
  Matrix backward(std::span<const double> d_mean, std::span<const double> d_std);
  ParameterList parameters() { return {&offset_mean_, &offset_scale_}; }
  GaussianHead current() const;

 private:
  Parameter offset_mean_;
  Parameter offset_scale_;
  double alpha_;
  Matrix input_;
  bool filled_ = false;
};

// Batch mean of −ln N(y | mean, std²).
double gaussian_nll(std::span<const double> y, std::span<const double> mean,
                    std::span<const double> std);

struct NllGrad {
  std::vector<double> d_mean;
  std::vector<double> d_std;
};
NllGrad gaussian_nll_grad(std::span<const double> y, std::span<const double> mean,
                          std::span<const double> std);

struct ElboConfig {
  std::size_t n_train = 1;
  double kl_weight() const { return 1.0 / static_cast<double>(n_train); }
};

// nll + kl_sum / n_train
double elbo(double nll, double kl_sum, const ElboConfig& cfg);

}  // namespace cbnn
