#pragma once

#include <cstddef>
#include <vector>

#include "spidet/errors.hpp"
#include "spidet/rng.hpp"

namespace spidet {

using Vector = std::vector<double>;

// Dense row-major matrix. Everything in this project is small (a few hundred
// rows at most), so storage is a flat vector with no blocking or sparsity.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  Vector& storage() { return data_; }
  const Vector& storage() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// Thin SVD A = U diag(s) V^T with k = min(rows, cols) columns kept.
struct SvdFactors {
  Matrix u;                 // m x k, orthonormal columns
  Vector singular_values;   // length k, non-increasing, non-negative
  Matrix v;                 // n x k, orthonormal columns
};

// One-sided Jacobi SVD. Throws InvalidInput on empty or non-finite input.
SvdFactors svd(const Matrix& a);

// Nuclear-norm proximal map: U diag((s_i - delta)_+) V^T.
// Throws InvalidInput when delta < 0.
Matrix soft_threshold_matrix(const Matrix& d, double delta);

// Lower-triangular G with G G^T = sigma. Throws NumericalFailure when the
// input is not symmetric positive definite.
Matrix cholesky(const Matrix& sigma);

// ceil(level * N)-th order statistic (no interpolation).
// Throws InvalidInput on an empty sample or level outside (0, 1).
double empirical_quantile(const Vector& values, double level);

// Draw from the normal(mu, sigma^2) truncated to the open interval (lo, hi).
// Uses plain rejection when the interval keeps at least 10% of the mass and
// an exponential-proposal rejection otherwise. Throws InvalidInput when
// lo >= hi or sigma <= 0.
double truncated_normal_sample(double lo, double hi, double mu, double sigma, Rng& rng);

double normal_cdf(double x);

// Basic dense kernels shared across modules.
Matrix multiply(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Vector matvec(const Matrix& a, const Vector& x);
Vector transpose_matvec(const Matrix& a, const Vector& x);
double frobenius_norm(const Matrix& a);
double nuclear_norm(const Matrix& a);
double dot(const Vector& a, const Vector& b);
double norm2(const Vector& a);

// Cached Cholesky factor of an SPD matrix, for repeated right-hand sides.
class CholFactor {
 public:
  CholFactor() = default;
  explicit CholFactor(const Matrix& spd) : g_(cholesky(spd)) {}

  // Solves (G G^T) x = rhs.
  Vector solve(const Vector& rhs) const;

  const Matrix& lower() const { return g_; }
  bool empty() const { return g_.empty(); }

 private:
  Matrix g_;
};

}  // namespace spidet
