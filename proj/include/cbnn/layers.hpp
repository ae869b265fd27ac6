#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cbnn/matrix.hpp"
#include "cbnn/rng.hpp"

namespace cbnn {

// A trainable tensor and its gradient accumulator (same shape).
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v);
  void zero_grad() { grad.fill(0.0); }
};

using ParameterList = std::vector<Parameter*>;

// ---- functional ops -------------------------------------------------------
// Each forward records what its backward needs into a tape. Calling a
// backward on a tape that has not seen a forward throws std::logic_error.

struct DenseTape {
  Matrix input;
  bool filled = false;
};

// out = x·W + b, with b (1×O) broadcast over rows.
Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b, DenseTape& tape);
// Accumulates into dw/db and returns the gradient w.r.t. x.
Matrix dense_backward(const DenseTape& tape, const Matrix& grad_out, const Matrix& w,
                      Matrix& dw, Matrix& db);

struct ReluTape {
  Matrix input;
  bool filled = false;
};

Matrix relu_forward(const Matrix& x, ReluTape& tape);
// Subgradient is 0 at exactly 0.
Matrix relu_backward(const ReluTape& tape, const Matrix& grad_out);

struct ConcatTape {
  std::vector<std::size_t> widths;
  std::size_t rows = 0;
  bool filled = false;
};

Matrix concat_forward(std::span<const Matrix> parts, ConcatTape& tape);
std::vector<Matrix> concat_backward(const ConcatTape& tape, const Matrix& grad_out);

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);
Matrix softplus(const Matrix& x);
Matrix softplus_inverse(const Matrix& y);

// ---- layer objects --------------------------------------------------------

enum class Mode { stochastic, mean_only };

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Matrix forward(const Matrix& x, Rng& rng, Mode mode) = 0;
  virtual Matrix backward(const Matrix& grad_out) = 0;
  virtual ParameterList parameters() = 0;
  virtual std::size_t in_features() const = 0;
  virtual std::size_t out_features() const = 0;
  // KL divergence of the layer's weight posterior from its prior; 0 for point estimates.
  virtual double kl() const { return 0.0; }
  // Adds scale·∂kl/∂θ into the parameter gradients.
  virtual void accumulate_kl_grad(double /*scale*/) {}
};

// Glorot-uniform weights, zero bias.
class DenseLayer final : public Layer {
 public:
  DenseLayer(std::string name, std::size_t in, std::size_t out, Rng& init_rng);

  Matrix forward(const Matrix& x, Rng& rng, Mode mode) override;
  Matrix backward(const Matrix& grad_out) override;
  ParameterList parameters() override { return {&weight_, &bias_}; }
  std::size_t in_features() const override { return weight_.value.rows(); }
  std::size_t out_features() const override { return weight_.value.cols(); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
  DenseTape tape_;
};

class ReluLayer final : public Layer {
 public:
  explicit ReluLayer(std::size_t width) : width_(width) {}
  Matrix forward(const Matrix& x, Rng&, Mode) override { return relu_forward(x, tape_); }
  Matrix backward(const Matrix& g) override { return relu_backward(tape_, g); }
  ParameterList parameters() override { return {}; }
  std::size_t in_features() const override { return width_; }
  std::size_t out_features() const override { return width_; }

 private:
  std::size_t width_;
  ReluTape tape_;
};

// Uniform(-r, r) fill with r = sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t in, std::size_t out, Rng& rng);

}  // namespace cbnn
