#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "corpn/linalg.hpp"

using corpn::Matrix;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

Matrix random_spd(std::mt19937_64& rng, std::size_t n) {
  const Matrix a = random_matrix(rng, n, n);
  Matrix s = corpn::matmul_nt(a, a);
  for (std::size_t i = 0; i < n; ++i) s(i, i) += 0.5;
  return s;
}

}  // namespace

TEST(Matmul, SmallProducts) {
  const Matrix a{{1, 2}, {3, 4}}, b{{5, 6}, {7, 8}};
  EXPECT_EQ(corpn::matmul(a, b), (Matrix{{19, 22}, {43, 50}}));
  EXPECT_EQ(corpn::matmul_nt(a, b), corpn::matmul(a, b.transpose()));
  EXPECT_EQ(corpn::matmul_tn(a, b), corpn::matmul(a.transpose(), b));
  EXPECT_THROW(corpn::matmul(a, Matrix(3, 1)), corpn::DimensionError);
}

TEST(Covariance, WorkedExample) {
  const Matrix f{{0.1, 0.5, 0.9}, {0.5, 0.9, 0.1}};
  const Matrix s = corpn::covariance(f);
  EXPECT_NEAR(s(0, 0), 0.106667, 1e-6);
  EXPECT_NEAR(s(1, 1), 0.106667, 1e-6);
  EXPECT_NEAR(s(0, 1), -0.053333, 1e-6);
  EXPECT_EQ(s(0, 1), s(1, 0));
  // Exact det is (0.1024 - 0.0256) / 9; -4.763806 comes from the rounded entries.
  EXPECT_NEAR(corpn::logdet_psd(s, 0.0), std::log(0.0768 / 9.0), 1e-12);
  EXPECT_NEAR(corpn::logdet_psd(s, 0.0), -4.763806, 1e-4);
}

TEST(Covariance, ConstantRowsGiveZero) {
  const Matrix f{{0.2, 0.2, 0.2}, {0.7, 0.7, 0.7}};
  for (double v : corpn::covariance(f).data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Covariance, SingleRowIsVariance) {
  const Matrix f{{1.0, 2.0, 3.0, 6.0}};
  const Matrix s = corpn::covariance(f);
  ASSERT_EQ(s.rows(), 1u);
  // mean 3, squared deviations 4 1 0 9, divisor 4.
  EXPECT_DOUBLE_EQ(s(0, 0), 3.5);
}

TEST(Covariance, NeedsTwoColumns) {
  EXPECT_THROW(corpn::covariance(Matrix(3, 1)), std::invalid_argument);
}

TEST(Covariance, SymmetricAndPsd) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const Matrix s = corpn::covariance(random_matrix(rng, 4, 9));
    for (std::size_t a = 0; a < 4; ++a)
      for (std::size_t b = 0; b < 4; ++b) EXPECT_EQ(s(a, b), s(b, a));
    EXPECT_NO_THROW(corpn::cholesky(s, 1e-12));
  }
}

TEST(Logdet, WorkedExamples) {
  EXPECT_EQ(corpn::logdet_psd(Matrix::identity(3), 0.0), 0.0);
  const double d[] = {2.0, 3.0};
  EXPECT_NEAR(corpn::logdet_psd(Matrix::diagonal(d), 0.0), std::log(6.0), 1e-12);
}

TEST(Logdet, FailureNamesPivot) {
  const Matrix s{{1.0, 0.0}, {0.0, -1.0}};
  try {
    corpn::logdet_psd(s, 0.0);
    FAIL() << "expected CholeskyError";
  } catch (const corpn::CholeskyError& e) {
    EXPECT_EQ(e.pivot(), 1u);
  }
}

TEST(Logdet, MonotoneInRidge) {
  std::mt19937_64 rng(4);
  const Matrix s = corpn::covariance(random_matrix(rng, 3, 10));
  double prev = corpn::logdet_psd(s, 1e-9);
  for (double eps : {1e-6, 1e-3, 1e-1, 1.0}) {
    const double v = corpn::logdet_psd(s, eps);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(Logdet, DiversityLossGrowsWithCorrelation) {
  // det of [[v, r v], [r v, v]] is v^2 (1 - r^2).
  const double v = 0.2;
  double prev = -std::numeric_limits<double>::infinity();
  for (double rho : {0.0, 0.3, 0.6, 0.9, 0.99}) {
    const Matrix s{{v, rho * v}, {rho * v, v}};
    const double loss = -corpn::logdet_psd(s, 0.0);
    EXPECT_NEAR(loss, -std::log(v * v * (1 - rho * rho)), 1e-12);
    EXPECT_GT(loss, prev);
    prev = loss;
  }
}

TEST(GradLogdet, WorkedExamples) {
  EXPECT_EQ(corpn::grad_logdet(Matrix::identity(2), 0.0), Matrix::identity(2));
  const double d[] = {2.0, 3.0};
  const Matrix g = corpn::grad_logdet(Matrix::diagonal(d), 0.0);
  EXPECT_NEAR(g(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(g(1, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(g(0, 1), 0.0);
}

TEST(GradLogdet, MatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const double h = 1e-5;
  for (int inst = 0; inst < 100; ++inst) {
    const Matrix s = random_spd(rng, 3);
    const Matrix g = corpn::grad_logdet(s, 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = i; j < 3; ++j) {
        // Symmetric perturbation: the derivative along E_ij + E_ji.
        Matrix up = s, down = s;
        up(i, j) += h;
        down(i, j) -= h;
        if (i != j) {
          up(j, i) += h;
          down(j, i) -= h;
        }
        const double num =
            (corpn::logdet_psd(up, 0.0) - corpn::logdet_psd(down, 0.0)) / (2 * h);
        const double ana = i == j ? g(i, i) : g(i, j) + g(j, i);
        EXPECT_LE(std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6}), 1e-5);
      }
    }
  }
}

TEST(ChainCovariance, ZeroCases) {
  std::mt19937_64 rng(2);
  const Matrix f = random_matrix(rng, 3, 5);
  EXPECT_EQ(corpn::chain_covariance_grad(f, Matrix(3, 3)), Matrix(3, 5));
  const Matrix flat{{0.4, 0.4, 0.4}, {0.1, 0.1, 0.1}};
  const Matrix g = corpn::chain_covariance_grad(flat, Matrix{{1, 2}, {2, 5}});
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(corpn::chain_covariance_grad(f, Matrix(2, 2)), corpn::DimensionError);
}

TEST(ChainCovariance, ComposedGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  const double h = 1e-5, eps = 1e-6;
  for (int inst = 0; inst < 100; ++inst) {
    Matrix f = random_matrix(rng, 3, 8);
    const Matrix g = corpn::chain_covariance_grad(
        f, corpn::grad_logdet(corpn::covariance(f), eps));
    for (std::size_t k = 0; k < f.size(); ++k) {
      const double saved = f.data()[k];
      f.data()[k] = saved + h;
      const double up = -corpn::logdet_psd(corpn::covariance(f), eps);
      f.data()[k] = saved - h;
      const double down = -corpn::logdet_psd(corpn::covariance(f), eps);
      f.data()[k] = saved;
      const double num = (up - down) / (2 * h);
      const double ana = -g.data()[k];
      EXPECT_LE(std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6}), 1e-4);
    }
  }
}
