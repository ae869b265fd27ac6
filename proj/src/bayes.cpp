#include "cbnn/bayes.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "cbnn/errors.hpp"

namespace cbnn {

namespace {
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
}

void FlipoutParams::validate() const {
  require_same_shape(w_mean, w_rho, "FlipoutParams mean/rho");
  if (bias.rows() != 1 || bias.cols() != w_mean.cols()) {
    throw DimensionError("FlipoutParams bias " + bias.shape_string());
  }
  if (!(prior_scale > 0.0)) throw ValidationError("prior_scale must be positive");
}

namespace {

// σ is supplied by the caller so a layer can reuse it across calls.
Matrix flipout_forward_sigma(const Matrix& x, const Matrix& w_mean, const Matrix* sigma,
                             const Matrix& bias, Rng& rng, Mode mode, FlipoutTape& tape) {
  const std::size_t batch = x.rows();
  const std::size_t in = w_mean.rows();
  const std::size_t out = w_mean.cols();

  Matrix result = matmul(x, w_mean);
  tape.input = x;
  tape.mode = mode;
  if (mode == Mode::stochastic) {
    tape.sigma = *sigma;
    tape.noise = Matrix(in, out);
    for (double& v : tape.noise.data()) v = rng.normal();
    tape.sign_in = Matrix(batch, in);
    for (double& v : tape.sign_in.data()) v = rng.rademacher();
    tape.sign_out = Matrix(batch, out);
    for (double& v : tape.sign_out.data()) v = rng.rademacher();

    const Matrix perturbation = hadamard(tape.sigma, tape.noise);
    const Matrix flipped = matmul(hadamard(x, tape.sign_in), perturbation);
    for (std::size_t i = 0; i < result.size(); ++i) result[i] += flipped[i] * tape.sign_out[i];
  }
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t j = 0; j < out; ++j) result(r, j) += bias[j];
  tape.filled = true;
  return result;
}

Matrix flipout_backward_sigmoid(const FlipoutTape& tape, const Matrix& grad_out,
                                const Matrix& w_mean, const Matrix& rho_sigmoid, Matrix& d_mean,
                                Matrix& d_rho, Matrix& d_bias) {
  const Matrix gm = matmul_tn(tape.input, grad_out);
  for (std::size_t i = 0; i < d_mean.size(); ++i) d_mean[i] += gm[i];
  for (std::size_t r = 0; r < grad_out.rows(); ++r)
    for (std::size_t j = 0; j < grad_out.cols(); ++j) d_bias[j] += grad_out(r, j);
  Matrix dx = matmul_nt(grad_out, w_mean);

  if (tape.mode == Mode::stochastic) {
    const Matrix g_flipped = hadamard(grad_out, tape.sign_out);
    const Matrix x_flipped = hadamard(tape.input, tape.sign_in);
    const Matrix d_perturbation = matmul_tn(x_flipped, g_flipped);
    for (std::size_t i = 0; i < d_rho.size(); ++i) {
      d_rho[i] += d_perturbation[i] * tape.noise[i] * rho_sigmoid[i];
    }
    const Matrix perturbation = hadamard(tape.sigma, tape.noise);
    const Matrix dx_flipped = matmul_nt(g_flipped, perturbation);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dx_flipped[i] * tape.sign_in[i];
  }
  return dx;
}

void check_flipout_shapes(const Matrix& x, const Matrix& w_mean, const Matrix& w_rho,
                          const Matrix& bias) {
  if (x.cols() != w_mean.rows()) {
    throw DimensionError("flipout_forward: input " + x.shape_string() + " vs weight " +
                         w_mean.shape_string());
  }
  require_same_shape(w_mean, w_rho, "flipout_forward mean/rho");
  if (bias.rows() != 1 || bias.cols() != w_mean.cols()) {
    throw DimensionError("flipout_forward: bias " + bias.shape_string());
  }
}

void check_backward(const FlipoutTape& tape, const Matrix& grad_out, const Matrix& w_mean) {
  if (!tape.filled) throw std::logic_error("flipout_backward before flipout_forward");
  if (grad_out.rows() != tape.input.rows() || grad_out.cols() != w_mean.cols()) {
    throw DimensionError("flipout_backward: upstream " + grad_out.shape_string());
  }
}

}  // namespace

Matrix flipout_forward(const Matrix& x, const Matrix& w_mean, const Matrix& w_rho,
                       const Matrix& bias, Rng& rng, Mode mode, FlipoutTape& tape) {
  check_flipout_shapes(x, w_mean, w_rho, bias);
  if (mode == Mode::stochastic) {
    const Matrix sigma = softplus(w_rho);
    return flipout_forward_sigma(x, w_mean, &sigma, bias, rng, mode, tape);
  }
  return flipout_forward_sigma(x, w_mean, nullptr, bias, rng, mode, tape);
}

Matrix flipout_forward(const Matrix& x, const FlipoutParams& p, Rng& rng, Mode mode,
                       FlipoutTape& tape) {
  return flipout_forward(x, p.w_mean, p.w_rho, p.bias, rng, mode, tape);
}

Matrix flipout_backward(const FlipoutTape& tape, const Matrix& grad_out, const Matrix& w_mean,
                        const Matrix& w_rho, Matrix& d_mean, Matrix& d_rho, Matrix& d_bias) {
  check_backward(tape, grad_out, w_mean);
  Matrix rho_sigmoid(w_rho.rows(), w_rho.cols());
  for (std::size_t i = 0; i < w_rho.size(); ++i) rho_sigmoid[i] = sigmoid(w_rho[i]);
  return flipout_backward_sigmoid(tape, grad_out, w_mean, rho_sigmoid, d_mean, d_rho, d_bias);
}

double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p) {
  const double d = mu_q - mu_p;
  return std::log(sigma_p / sigma_q) + (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) -
         0.5;
}

double flipout_kl(const Matrix& w_mean, const Matrix& w_rho, double prior_scale) {
  require_same_shape(w_mean, w_rho, "flipout_kl");
  double total = 0.0;
  for (std::size_t i = 0; i < w_mean.size(); ++i) {
    total += gaussian_kl(w_mean[i], softplus(w_rho[i]), 0.0, prior_scale);
  }
  return total;
}

double flipout_kl(const FlipoutParams& p) { return flipout_kl(p.w_mean, p.w_rho, p.prior_scale); }

void accumulate_flipout_kl_grad(const Matrix& w_mean, const Matrix& w_rho, double prior_scale,
                                double scale, Matrix& d_mean, Matrix& d_rho) {
  const double inv_p2 = 1.0 / (prior_scale * prior_scale);
  for (std::size_t i = 0; i < w_mean.size(); ++i) {
    const double sigma = softplus(w_rho[i]);
    d_mean[i] += scale * w_mean[i] * inv_p2;
    d_rho[i] += scale * (sigma * inv_p2 - 1.0 / sigma) * sigmoid(w_rho[i]);
  }
}

FlipoutLayer::FlipoutLayer(std::string name, std::size_t in, std::size_t out, Rng& init_rng,
                           double prior_scale)
    : mean_(name + ".w_mean", glorot_uniform(in, out, init_rng)),
      rho_(name + ".w_rho", Matrix(in, out, softplus_inverse(kInitialPosteriorScale))),
      bias_(name + ".bias", Matrix(1, out)),
      prior_scale_(prior_scale) {
  if (!(prior_scale > 0.0)) throw ValidationError("prior_scale must be positive");
}

void FlipoutLayer::refresh() const {
  if (cache_valid_ && cached_rho_ == rho_.value) return;
  cached_rho_ = rho_.value;
  sigma_ = softplus(rho_.value);
  log_sigma_ = Matrix(sigma_.rows(), sigma_.cols());
  rho_sigmoid_ = Matrix(sigma_.rows(), sigma_.cols());
  for (std::size_t i = 0; i < sigma_.size(); ++i) {
    log_sigma_[i] = std::log(sigma_[i]);
    rho_sigmoid_[i] = sigmoid(rho_.value[i]);
  }
  cache_valid_ = true;
}

Matrix FlipoutLayer::forward(const Matrix& x, Rng& rng, Mode mode) {
  check_flipout_shapes(x, mean_.value, rho_.value, bias_.value);
  if (mode == Mode::stochastic) refresh();
  return flipout_forward_sigma(x, mean_.value, &sigma_, bias_.value, rng, mode, tape_);
}

Matrix FlipoutLayer::backward(const Matrix& grad_out) {
  check_backward(tape_, grad_out, mean_.value);
  refresh();
  return flipout_backward_sigmoid(tape_, grad_out, mean_.value, rho_sigmoid_, mean_.grad,
                                  rho_.grad, bias_.grad);
}

double FlipoutLayer::kl() const {
  refresh();
  const double log_p = std::log(prior_scale_);
  const double inv_2p2 = 1.0 / (2.0 * prior_scale_ * prior_scale_);
  double total = 0.0;
  for (std::size_t i = 0; i < sigma_.size(); ++i) {
    const double mu = mean_.value[i];
    total += log_p - log_sigma_[i] + (sigma_[i] * sigma_[i] + mu * mu) * inv_2p2 - 0.5;
  }
  return total;
}

void FlipoutLayer::accumulate_kl_grad(double scale) {
  refresh();
  const double inv_p2 = 1.0 / (prior_scale_ * prior_scale_);
  for (std::size_t i = 0; i < sigma_.size(); ++i) {
    mean_.grad[i] += scale * mean_.value[i] * inv_p2;
    rho_.grad[i] += scale * (sigma_[i] * inv_p2 - 1.0 / sigma_[i]) * rho_sigmoid_[i];
  }
}

FlipoutParams FlipoutLayer::snapshot() const {
  return FlipoutParams{mean_.value, rho_.value, bias_.value, prior_scale_};
}

// ---- head -------------------------------------------------------------------

GaussianHead GaussianHead::centered(double mean_at_zero, double std_at_zero, double alpha) {
  if (!(mean_at_zero > 0.0)) throw ValidationError("head mean at zero must be positive");
  if (!(std_at_zero > kHeadStdFloor)) throw ValidationError("head std at zero must exceed floor");
  return GaussianHead{softplus_inverse(mean_at_zero), softplus_inverse(std_at_zero - kHeadStdFloor),
                      alpha};
}

GaussianMoments gaussian_head(const Matrix& t, const GaussianHead& head) {
  if (t.cols() != 1) throw DimensionError("gaussian_head expects B×1 input, got " + t.shape_string());
  GaussianMoments out;
  out.mean.resize(t.rows());
  out.std.resize(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    out.mean[i] = softplus(t[i] + head.offset_mean);
    out.std[i] = kHeadStdFloor + softplus(head.alpha * t[i] + head.offset_scale);
  }
  return out;
}

GaussianHeadLayer::GaussianHeadLayer(std::string name, const GaussianHead& init)
    : offset_mean_(name + ".offset_mean", Matrix(1, 1, init.offset_mean)),
      offset_scale_(name + ".offset_scale", Matrix(1, 1, init.offset_scale)),
      alpha_(init.alpha) {}

GaussianHead GaussianHeadLayer::current() const {
  return GaussianHead{offset_mean_.value[0], offset_scale_.value[0], alpha_};
}

GaussianMoments GaussianHeadLayer::forward(const Matrix& t) {
  input_ = t;
  filled_ = true;
  return gaussian_head(t, current());
}

Matrix GaussianHeadLayer::backward(std::span<const double> d_mean, std::span<const double> d_std) {
  if (!filled_) throw std::logic_error("head backward before forward");
  if (d_mean.size() != input_.rows() || d_std.size() != input_.rows()) {
    throw DimensionError("head backward: gradient length mismatch");
  }
  Matrix dt(input_.rows(), 1);
  const double om = offset_mean_.value[0];
  const double os = offset_scale_.value[0];
  for (std::size_t i = 0; i < input_.rows(); ++i) {
    const double gm = d_mean[i] * sigmoid(input_[i] + om);
    const double gs = d_std[i] * sigmoid(alpha_ * input_[i] + os);
    dt[i] = gm + alpha_ * gs;
    offset_mean_.grad[0] += gm;
    offset_scale_.grad[0] += gs;
  }
  return dt;
}

// ---- likelihood ----------------------------------------------------------------

namespace {
void check_nll_args(std::span<const double> y, std::span<const double> mean,
                    std::span<const double> std) {
  if (y.size() != mean.size() || y.size() != std.size()) {
    throw DimensionError("gaussian_nll: length mismatch");
  }
  if (y.empty()) throw DimensionError("gaussian_nll: empty batch");
  for (double s : std) {
    if (!(s > 0.0)) throw NumericError("gaussian_nll: non-positive std");
  }
}
}  // namespace

double gaussian_nll(std::span<const double> y, std::span<const double> mean,
                    std::span<const double> std) {
  check_nll_args(y, mean, std);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double z = (y[i] - mean[i]) / std[i];
    total += kHalfLog2Pi + std::log(std[i]) + 0.5 * z * z;
  }
  return total / static_cast<double>(y.size());
}

NllGrad gaussian_nll_grad(std::span<const double> y, std::span<const double> mean,
                          std::span<const double> std) {
  check_nll_args(y, mean, std);
  const double inv_b = 1.0 / static_cast<double>(y.size());
  NllGrad g;
  g.d_mean.resize(y.size());
  g.d_std.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - mean[i];
    const double s2 = std[i] * std[i];
    g.d_mean[i] = -r / s2 * inv_b;
    g.d_std[i] = (1.0 / std[i] - r * r / (s2 * std[i])) * inv_b;
  }
  return g;
}

double elbo(double nll, double kl_sum, const ElboConfig& cfg) {
  if (cfg.n_train == 0) throw ValidationError("ElboConfig.n_train must be >= 1");
  return nll + kl_sum / static_cast<double>(cfg.n_train);
}

}  // namespace cbnn
