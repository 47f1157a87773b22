#include "corpn/linalg.hpp"

#include <cmath>
#include <sstream>

namespace corpn {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) throw DimensionError("Matrix: data size != rows*cols");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> init) {
  rows_ = init.size();
  cols_ = rows_ == 0 ? 0 : init.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : init) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

std::string describe(const char* what, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << what << ": " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
  return os.str();
}

std::string cholesky_message(std::size_t pivot, double value) {
  std::ostringstream os;
  os << "matrix is not positive definite: pivot " << pivot << " = " << value;
  return os.str();
}

}  // namespace

CholeskyError::CholeskyError(std::size_t pivot, double value)
    : std::runtime_error(cholesky_message(pivot, value)), pivot_(pivot), value_(value) {}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError(describe("matmul", a, b));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError(describe("matmul_nt", a, b));
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionError(describe("matmul_tn", a, b));
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

namespace {

Matrix centered_rows(const Matrix& f) {
  Matrix c = f;
  const double inv = 1.0 / static_cast<double>(f.cols());
  for (std::size_t r = 0; r < f.rows(); ++r) {
    auto row = c.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean *= inv;
    for (double& v : row) v -= mean;
  }
  return c;
}

}  // namespace

Matrix covariance(const Matrix& f) {
  if (f.cols() < 2) throw DimensionError("covariance: need at least 2 columns");
  const Matrix c = centered_rows(f);
  const double inv = 1.0 / static_cast<double>(f.cols());
  Matrix s(f.rows(), f.rows());
  for (std::size_t j = 0; j < f.rows(); ++j) {
    for (std::size_t k = j; k < f.rows(); ++k) {
      auto a = c.row(j);
      auto b = c.row(k);
      double acc = 0.0;
      for (std::size_t i = 0; i < f.cols(); ++i) acc += a[i] * b[i];
      s(j, k) = acc * inv;
      s(k, j) = s(j, k);
    }
  }
  return s;
}

Matrix cholesky(const Matrix& s, double ridge) {
  if (s.rows() != s.cols()) throw DimensionError("cholesky: matrix is not square");
  if (ridge < 0.0) throw std::invalid_argument("cholesky: ridge must be >= 0");
  const std::size_t n = s.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = s(j, j) + ridge;
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) throw CholeskyError(j, diag);
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = s(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

double logdet_psd(const Matrix& s, double ridge) {
  const Matrix l = cholesky(s, ridge);
  double acc = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) acc += std::log(l(i, i));
  return 2.0 * acc;
}

Matrix grad_logdet(const Matrix& s, double ridge) {
  const Matrix l = cholesky(s, ridge);
  const std::size_t n = l.rows();
  // Invert L by forward substitution, then (L L^T)^{-1} = L^{-T} L^{-1}.
  Matrix linv(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    for (std::size_t i = col; i < n; ++i) {
      double v = (i == col) ? 1.0 : 0.0;
      for (std::size_t k = col; k < i; ++k) v -= l(i, k) * linv(k, col);
      linv(i, col) = v / l(i, i);
    }
  }
  Matrix inv = matmul_tn(linv, linv);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = avg;
      inv(j, i) = avg;
    }
  }
  return inv;
}

Matrix chain_covariance_grad(const Matrix& f, const Matrix& g) {
  if (g.rows() != g.cols() || g.rows() != f.rows()) {
    throw DimensionError(describe("chain_covariance_grad", f, g));
  }
  if (f.cols() == 0) throw DimensionError("chain_covariance_grad: empty F");
  Matrix out = matmul(g, centered_rows(f));
  const double scale = 2.0 / static_cast<double>(f.cols());
  for (double& v : out.data()) v *= scale;
  return out;
}

}  // namespace corpn
