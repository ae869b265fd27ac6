#include "cbnn/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "cbnn/errors.hpp"

namespace cbnn {

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b, DenseTape& tape) {
  if (x.cols() != w.rows()) {
    throw DimensionError("dense_forward: input " + x.shape_string() + " vs weight " +
                         w.shape_string());
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("dense_forward: bias " + b.shape_string() + " vs weight " +
                         w.shape_string());
  }
  Matrix out = matmul(x, w);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b[j];
  tape.input = x;
  tape.filled = true;
  return out;
}

Matrix dense_backward(const DenseTape& tape, const Matrix& grad_out, const Matrix& w,
                      Matrix& dw, Matrix& db) {
  if (!tape.filled) throw std::logic_error("dense_backward before dense_forward");
  if (grad_out.rows() != tape.input.rows() || grad_out.cols() != w.cols()) {
    throw DimensionError("dense_backward: upstream " + grad_out.shape_string());
  }
  const Matrix gw = matmul_tn(tape.input, grad_out);
  for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += gw[i];
  for (std::size_t r = 0; r < grad_out.rows(); ++r)
    for (std::size_t j = 0; j < grad_out.cols(); ++j) db[j] += grad_out(r, j);
  return matmul_nt(grad_out, w);
}

Matrix relu_forward(const Matrix& x, ReluTape& tape) {
  Matrix out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  tape.input = x;
  tape.filled = true;
  return out;
}

Matrix relu_backward(const ReluTape& tape, const Matrix& grad_out) {
  if (!tape.filled) throw std::logic_error("relu_backward before relu_forward");
  require_same_shape(tape.input, grad_out, "relu_backward");
  Matrix g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(tape.input[i] > 0.0)) g[i] = 0.0;
  }
  return g;
}

Matrix concat_forward(std::span<const Matrix> parts, ConcatTape& tape) {
  if (parts.empty()) throw DimensionError("concat_forward: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  tape.widths.clear();
  for (const Matrix& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_forward: row counts " + std::to_string(rows) + " vs " +
                           std::to_string(p.rows()));
    }
    tape.widths.push_back(p.cols());
    total += p.cols();
  }
  Matrix out(rows, total);
  std::size_t offset = 0;
  for (const Matrix& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, offset + c) = p(r, c);
    offset += p.cols();
  }
  tape.rows = rows;
  tape.filled = true;
  return out;
}

std::vector<Matrix> concat_backward(const ConcatTape& tape, const Matrix& grad_out) {
  if (!tape.filled) throw std::logic_error("concat_backward before concat_forward");
  std::size_t total = 0;
  for (std::size_t w : tape.widths) total += w;
  if (grad_out.rows() != tape.rows || grad_out.cols() != total) {
    throw DimensionError("concat_backward: upstream " + grad_out.shape_string());
  }
  std::vector<Matrix> parts;
  std::size_t offset = 0;
  for (std::size_t w : tape.widths) {
    Matrix p(tape.rows, w);
    for (std::size_t r = 0; r < tape.rows; ++r)
      for (std::size_t c = 0; c < w; ++c) p(r, c) = grad_out(r, offset + c);
    parts.push_back(std::move(p));
    offset += w;
  }
  return parts;
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::domain_error("softplus_inverse of non-positive value");
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix softplus(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data()) v = softplus(v);
  return out;
}

Matrix softplus_inverse(const Matrix& y) {
  Matrix out = y;
  for (double& v : out.data()) v = softplus_inverse(v);
  return out;
}

Matrix glorot_uniform(std::size_t in, std::size_t out, Rng& rng) {
  const double r = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * r;
  return w;
}

DenseLayer::DenseLayer(std::string name, std::size_t in, std::size_t out, Rng& init_rng)
    : weight_(name + ".weight", glorot_uniform(in, out, init_rng)),
      bias_(name + ".bias", Matrix(1, out)) {}

Matrix DenseLayer::forward(const Matrix& x, Rng&, Mode) {
  return dense_forward(x, weight_.value, bias_.value, tape_);
}

Matrix DenseLayer::backward(const Matrix& grad_out) {
  return dense_backward(tape_, grad_out, weight_.value, weight_.grad, bias_.grad);
}

}  // namespace cbnn
