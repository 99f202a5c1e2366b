#include "support.hpp"

#include "rankprune/linalg.hpp"

#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <random>

using namespace rankprune;
using rptest::random_matrix;

TEST(Svd, IdentityHasUnitSpectrum) {
  const SvdFactors f = svd(Matrix::identity(3));
  ASSERT_EQ(f.sigma.size(), 3u);
  for (double s : f.sigma)
    EXPECT_NEAR(s, 1.0, 1e-14);
  EXPECT_LE(max_abs_diff(f.reconstruct(), Matrix::identity(3)), 1e-14);
}

TEST(Svd, DiagonalKeepsOrderAndBasis) {
  const SvdFactors f = svd(Matrix::diagonal({3, 2, 1}));
  EXPECT_EQ(f.sigma, (std::vector<double>{3, 2, 1}));
  EXPECT_EQ(f.u, Matrix::identity(3));
  EXPECT_EQ(f.v, Matrix::identity(3));
}

TEST(Svd, DiagonalOutOfOrderIsSorted) {
  const SvdFactors f = svd(Matrix::diagonal({1, 3, 2}));
  EXPECT_EQ(f.sigma, (std::vector<double>{3, 2, 1}));
  EXPECT_LE(max_abs_diff(f.reconstruct(), Matrix::diagonal({1, 3, 2})), 1e-15);
}

TEST(Svd, SeededEightByFiveSatisfiesDefiningEquations) {
  std::mt19937_64 rng(8);
  const Matrix a = random_matrix(rng, 8, 5);
  const SvdFactors f = svd(a);
  EXPECT_LE(rptest::defining_equation_error(a, f), 1e-8);
  EXPECT_LE(frobenius_norm(f.reconstruct() - a), 1e-8 * std::max(1.0, frobenius_norm(a)));
}

TEST(Svd, RejectsNonFinite) {
  Matrix a(2, 2, 1.0);
  a(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(svd(a), InvalidInputError);
  a(0, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(svd(a), InvalidInputError);
}

TEST(Svd, MatchesEigenSpectrum) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng() % 12, n = 1 + rng() % 12;
    const Matrix a = random_matrix(rng, m, n);
    const SvdFactors f = svd(a);
    const Eigen::JacobiSVD<Eigen::MatrixXd> ref(rptest::to_eigen(a));
    ASSERT_EQ(static_cast<Eigen::Index>(f.sigma.size()), ref.singularValues().size());
    for (std::size_t i = 0; i < f.sigma.size(); ++i)
      EXPECT_NEAR(f.sigma[i], ref.singularValues()(static_cast<Eigen::Index>(i)), 1e-10);
  }
}

TEST(Svd, InvariantsOnRandomShapesUpTo64) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = 1 + rng() % 64, n = 1 + rng() % 64;
    const Matrix a = random_matrix(rng, m, n, 3.0);
    const SvdFactors f = svd(a);
    ASSERT_EQ(f.sigma.size(), std::min(m, n));
    EXPECT_LE(rptest::orthonormality_error(f.u), 1e-8);
    EXPECT_LE(rptest::orthonormality_error(f.v), 1e-8);
    EXPECT_LE(frobenius_norm(f.reconstruct() - a), 1e-8 * std::max(1.0, frobenius_norm(a)));
    for (std::size_t i = 0; i < f.sigma.size(); ++i) {
      EXPECT_GE(f.sigma[i], 0.0);
      if (i)
        EXPECT_LE(f.sigma[i], f.sigma[i - 1]);
    }
  }
}

TEST(Svd, RankDeficientAndSparseInputs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 2 + rng() % 10, n = 2 + rng() % 10, k = 1 + rng() % std::min(m, n);
    Matrix a = matmul(random_matrix(rng, m, k), random_matrix(rng, k, n));
    for (double& v : a.values())
      if (rng() % 3 == 0)
        v = 0.0;
    if (trial % 4 == 0)
      for (std::size_t c = 0; c < n; ++c)
        a(0, c) = 0.0;
    const SvdFactors f = svd(a);
    EXPECT_LE(rptest::orthonormality_error(f.u), 1e-8);
    EXPECT_LE(rptest::orthonormality_error(f.v), 1e-8);
    EXPECT_LE(frobenius_norm(f.reconstruct() - a), 1e-8 * std::max(1.0, frobenius_norm(a)));
  }
}

TEST(Svd, ZeroMatrixHasZeroSpectrumAndOrthonormalFactors) {
  const SvdFactors f = svd(Matrix(4, 3));
  for (double s : f.sigma)
    EXPECT_EQ(s, 0.0);
  EXPECT_LE(rptest::orthonormality_error(f.u), 1e-12);
  EXPECT_LE(rptest::orthonormality_error(f.v), 1e-12);
}

TEST(Svd, SignConventionFirstEntryNonNegative) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const SvdFactors f = svd(random_matrix(rng, 6, 4) * -1.0);
    for (std::size_t i = 0; i < f.sigma.size(); ++i) {
      std::size_t r = 0;
      while (r < f.u.rows() && std::abs(f.u(r, i)) <= 1e-12)
        ++r;
      ASSERT_LT(r, f.u.rows());
      EXPECT_GT(f.u(r, i), 0.0);
    }
  }
}

TEST(Svd, TiedSpectrumReproducesProjector) {
  // sigma = (2, 2, 1): any basis of the tied plane is acceptable, but the
  // projector onto it is unique.
  std::mt19937_64 rng(17);
  const Matrix q = svd(random_matrix(rng, 3, 3)).u;
  const Matrix a = matmul(matmul(q, Matrix::diagonal({2, 2, 1})), q.transposed());
  const SvdFactors f = svd(a);
  EXPECT_NEAR(f.sigma[0], 2.0, 1e-12);
  EXPECT_NEAR(f.sigma[1], 2.0, 1e-12);
  Matrix p(3, 3), p_ref(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t t = 0; t < 2; ++t) {
        p(i, j) += f.u(i, t) * f.u(j, t);
        p_ref(i, j) += q(i, t) * q(j, t);
      }
  EXPECT_LE(max_abs_diff(p, p_ref), 1e-10);
  EXPECT_LE(frobenius_norm(f.reconstruct() - a), 1e-12);
}

TEST(Svd, Deterministic) {
  std::mt19937_64 rng(99);
  const Matrix a = random_matrix(rng, 17, 9);
  const SvdFactors f = svd(a), g = svd(a);
  EXPECT_EQ(f.u, g.u);
  EXPECT_EQ(f.v, g.v);
  EXPECT_EQ(f.sigma, g.sigma);
}

TEST(FrobeniusNorm, Examples) {
  EXPECT_EQ(frobenius_norm(Matrix::diagonal({3, 4})), 5.0);
  EXPECT_EQ(frobenius_norm(Matrix(3, 2)), 0.0);
  std::mt19937_64 rng(4);
  const Matrix a = random_matrix(rng, 7, 5);
  double s = 0.0;
  for (double x : svd(a).sigma)
    s += x * x;
  EXPECT_NEAR(frobenius_norm(a), std::sqrt(s), 1e-10);
}

TEST(Truncate, DiagonalTruncation) {
  const Matrix t = truncate(svd(Matrix::diagonal({3, 2, 1})), 2);
  EXPECT_LE(max_abs_diff(t, Matrix::diagonal({3, 2, 0})), 1e-15);
}

TEST(Truncate, FullRankReconstructs) {
  std::mt19937_64 rng(6);
  const Matrix a = random_matrix(rng, 5, 7);
  const SvdFactors f = svd(a);
  EXPECT_LE(max_abs_diff(truncate(f, f.sigma.size()), a), 1e-8);
}

TEST(Truncate, ErrorMatchesTail) {
  std::mt19937_64 rng(66);
  const Matrix a = random_matrix(rng, 6, 6);
  const SvdFactors f = svd(a);
  const Matrix t = truncate(f, 2);
  double tail = 0.0;
  for (std::size_t i = 2; i < 6; ++i)
    tail += f.sigma[i] * f.sigma[i];
  EXPECT_NEAR(frobenius_norm(a - t), std::sqrt(tail), 1e-8);
  EXPECT_NEAR(frobenius_norm(a - t), low_rank_error(f, 2), 1e-8);
  // rank <= 2: the third singular value of the truncation vanishes.
  EXPECT_LE(svd(t).sigma[2], 1e-10);
}

TEST(Truncate, RejectsOutOfRangeK) {
  const SvdFactors f = svd(Matrix::identity(3));
  EXPECT_THROW(truncate(f, 0), DomainError);
  EXPECT_THROW(truncate(f, 4), DomainError);
}

TEST(LowRankError, Examples) {
  const SvdFactors f = svd(Matrix::diagonal({3, 2, 1}));
  EXPECT_NEAR(low_rank_error(f, 1), std::sqrt(5.0), 1e-15);
  EXPECT_EQ(low_rank_error(f, 3), 0.0);
  EXPECT_NEAR(low_rank_error(f, 0), std::sqrt(14.0), 1e-15);
  EXPECT_THROW(low_rank_error(f, 4), DomainError);
}

TEST(EckartYoung, NoRandomRankKMatrixIsCloser) {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + rng() % 6, n = 2 + rng() % 6;
    const Matrix a = random_matrix(rng, m, n);
    const SvdFactors f = svd(a);
    for (std::size_t k = 1; k < std::min(m, n); ++k) {
      const double best = frobenius_norm(a - truncate(f, k));
      for (int s = 0; s < 100; ++s) {
        Matrix b = matmul(random_matrix(rng, m, k), random_matrix(rng, k, n));
        b = b * (frobenius_norm(a) / frobenius_norm(b));
        EXPECT_GE(frobenius_norm(a - b), best - 1e-10);
      }
    }
  }
}
