#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "cbnn/matrix.hpp"

namespace cbnn {

struct EigenResult {
  std::vector<double> values;  // descending
  Matrix vectors;              // columns pair with values
  std::size_t sweeps = 0;
};

// Cyclic Jacobi rotations; stops once the off-diagonal Frobenius norm
// drops below tol·max(1, ‖A‖_F). Input must be symmetric.
EigenResult jacobi_eigen(const Matrix& symmetric, double tol = 1e-12, std::size_t max_sweeps = 100);

// Lower-triangular L with A = L·Lᵀ. If a pivot falls below
// `pivot_tol`·A(k,k), returns nullopt and sets *failed_index to k.
std::optional<Matrix> cholesky(const Matrix& spd, double pivot_tol = 1e-10,
                               std::size_t* failed_index = nullptr);
// Solves L·Lᵀ x = b.
std::vector<double> cholesky_solve(const Matrix& lower, const std::vector<double>& b);
Matrix cholesky_inverse(const Matrix& lower);

// Column-wise sample correlation (n−1 denominator). Zero-variance columns
// are reported through *constant_column.
std::optional<Matrix> correlation_matrix(const Matrix& columns,
                                         std::size_t* constant_column = nullptr);
// Column-wise sample covariance (n−1 denominator).
Matrix covariance_matrix(const Matrix& columns);

}  // namespace cbnn
