#include "cbnn/optim.hpp"

#include <cmath>
#include <limits>

#include "cbnn/errors.hpp"

namespace cbnn {

namespace {
void check_gradients(const ParameterList& params) {
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
  }
}

std::vector<Matrix> zeros_like(const ParameterList& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.emplace_back(p->value.rows(), p->value.cols());
  return out;
}
}  // namespace

Adam::Adam(ParameterList params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg), m_(zeros_like(params_)), v_(zeros_like(params_)) {
  if (!(cfg_.learning_rate > 0.0)) throw ValidationError("Adam learning rate must be positive");
}

void Adam::step() {
  check_gradients(params_);
  ++t_;
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Matrix& m = m_[k];
    Matrix& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

Vadam::Vadam(ParameterList params, VadamConfig cfg)
    : params_(std::move(params)), cfg_(cfg), m_(zeros_like(params_)), v_(zeros_like(params_)) {
  if (!(cfg_.learning_rate > 0.0)) throw ValidationError("Vadam learning rate must be positive");
  if (cfg_.n_train == 0) throw ValidationError("Vadam n_train must be >= 1");
  if (cfg_.lambda_prior < 0.0) throw ValidationError("Vadam lambda_prior must be >= 0");
  if (cfg_.mc_samples == 0) throw ValidationError("Vadam mc_samples must be >= 1");
}

double Vadam::corrected_second_moment(std::size_t k, std::size_t i) const {
  if (t_ == 0) return 0.0;
  return v_[k][i] / (1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
}

double Vadam::posterior_std(std::size_t k, std::size_t i) const {
  const double precision =
      static_cast<double>(cfg_.n_train) * (corrected_second_moment(k, i) + cfg_.lambda_tilde());
  if (!(precision > 0.0)) return std::numeric_limits<double>::infinity();
  return 1.0 / std::sqrt(precision);
}

void Vadam::perturb(Rng& rng) {
  if (!cfg_.perturb) return;
  if (!perturbed_) {
    means_.clear();
    for (const Parameter* p : params_) means_.push_back(p->value);
  }
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double sd = posterior_std(k, i);
      if (!std::isfinite(sd)) {
        throw NumericError("Vadam perturbation has zero precision (lambda_prior = 0 at t = 0)");
      }
      p.value[i] = means_[k][i] + rng.normal() * sd;
    }
  }
  perturbed_ = true;
}

void Vadam::restore() {
  if (!perturbed_) return;
  for (std::size_t k = 0; k < params_.size(); ++k) params_[k]->value = means_[k];
  perturbed_ = false;
}

void Vadam::step() {
  check_gradients(params_);
  restore();
  ++t_;
  const double t = static_cast<double>(t_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  const double lt = cfg_.lambda_tilde();
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Matrix& m = m_[k];
    Matrix& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * (g + lt * p.value[i]);
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + lt);
    }
  }
}

}  // namespace cbnn
