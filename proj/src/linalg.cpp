#include "cbnn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cbnn/errors.hpp"

namespace cbnn {

namespace {
double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}
}  // namespace

EigenResult jacobi_eigen(const Matrix& symmetric, double tol, std::size_t max_sweeps) {
  const std::size_t n = symmetric.rows();
  if (symmetric.cols() != n) throw DimensionError("jacobi_eigen needs a square matrix");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(symmetric(i, j) - symmetric(j, i)) > 1e-12 * (1.0 + std::abs(symmetric(i, j))))
        throw ValidationError("jacobi_eigen needs a symmetric matrix");

  Matrix a = symmetric;
  Matrix v = identity(n);
  const double threshold = tol * std::max(1.0, frobenius_norm(symmetric));
  EigenResult result;
  while (off_diagonal_norm(a) >= threshold) {
    if (result.sweeps >= max_sweeps) throw NumericError("jacobi_eigen did not converge");
    ++result.sweeps;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  result.values.resize(n);
  result.vectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    result.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) result.vectors(i, k) = v(i, order[k]);
  }
  return result;
}

std::optional<Matrix> cholesky(const Matrix& spd, double pivot_tol, std::size_t* failed_index) {
  const std::size_t n = spd.rows();
  if (spd.cols() != n) throw DimensionError("cholesky needs a square matrix");
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = spd(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > pivot_tol * std::max(spd(j, j), 1e-300))) {
      if (failed_index) *failed_index = j;
      return std::nullopt;
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = spd(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

std::vector<double> cholesky_solve(const Matrix& lower, const std::vector<double>& b) {
  const std::size_t n = lower.rows();
  if (b.size() != n) throw DimensionError("cholesky_solve: rhs length mismatch");
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * y[k];
    y[i] = s / lower(i, i);
  }
  std::vector<double> x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= lower(k, ii) * x[k];
    x[ii] = s / lower(ii, ii);
  }
  return x;
}

Matrix cholesky_inverse(const Matrix& lower) {
  const std::size_t n = lower.rows();
  Matrix inv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> e(n, 0.0);
    e[j] = 1.0;
    const auto col = cholesky_solve(lower, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

Matrix covariance_matrix(const Matrix& columns) {
  const std::size_t n = columns.rows();
  const std::size_t p = columns.cols();
  if (n < 2) throw ValidationError("covariance needs at least two rows");
  std::vector<double> mean(p, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < p; ++c) mean[c] += columns(r, c);
  for (double& m : mean) m /= static_cast<double>(n);
  Matrix cov(p, p);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < p; ++i) {
      const double di = columns(r, i) - mean[i];
      for (std::size_t j = i; j < p; ++j) cov(i, j) += di * (columns(r, j) - mean[j]);
    }
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = i; j < p; ++j) {
      cov(i, j) /= static_cast<double>(n - 1);
      cov(j, i) = cov(i, j);
    }
  return cov;
}

std::optional<Matrix> correlation_matrix(const Matrix& columns, std::size_t* constant_column) {
  for (std::size_t c = 0; c < columns.cols(); ++c) {
    bool constant = true;
    for (std::size_t r = 1; r < columns.rows() && constant; ++r)
      constant = columns(r, c) == columns(0, c);
    if (constant) {
      if (constant_column) *constant_column = c;
      return std::nullopt;
    }
  }
  Matrix cov = covariance_matrix(columns);
  const std::size_t p = cov.rows();
  std::vector<double> sd(p);
  for (std::size_t i = 0; i < p; ++i) {
    if (!(cov(i, i) > 0.0)) {
      if (constant_column) *constant_column = i;
      return std::nullopt;
    }
    sd[i] = std::sqrt(cov(i, i));
  }
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) cov(i, j) = i == j ? 1.0 : cov(i, j) / (sd[i] * sd[j]);
  return cov;
}

}  // namespace cbnn
