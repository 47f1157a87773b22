#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace corpn {

/// Dense row-major matrix of doubles. Small by design: the largest matrices
/// in this library are N x N_A probability blocks and D x D projections.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> init);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transpose() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Raised when the ridged matrix handed to the log-determinant kernels is
/// not numerically positive definite.
class CholeskyError : public std::runtime_error {
 public:
  CholeskyError(std::size_t pivot, double value);
  std::size_t pivot() const { return pivot_; }
  double value() const { return value_; }

 private:
  std::size_t pivot_;
  double value_;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// Empirical covariance of the rows of f over its columns, divisor N_A.
/// Requires at least two columns.
Matrix covariance(const Matrix& f);

/// Lower-triangular L with L L^T = s + ridge * I.
Matrix cholesky(const Matrix& s, double ridge = 0.0);

/// log det(s + ridge * I), natural log, via Cholesky.
double logdet_psd(const Matrix& s, double ridge);

/// d logdet(s + ridge I) / ds = (s + ridge I)^{-1}, symmetrized.
Matrix grad_logdet(const Matrix& s, double ridge);

/// Back-propagates a gradient g with respect to covariance(f) into a gradient
/// with respect to f: (2 / N_A) * g * (f - rowmean(f)). g must be symmetric.
Matrix chain_covariance_grad(const Matrix& f, const Matrix& g);

}  // namespace corpn
