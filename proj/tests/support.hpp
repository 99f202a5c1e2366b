#pragma once

#include "rankprune/linalg.hpp"
#include "rankprune/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>

namespace rptest {

using rankprune::Matrix;

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t m, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix a(m, n);
  for (double& v : a.values())
    v = d(rng);
  return a;
}

inline Eigen::MatrixXd to_eigen(const Matrix& a) {
  Eigen::MatrixXd e(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a(i, j);
  return e;
}

// max |Q^T Q - I|
inline double orthonormality_error(const Matrix& q) {
  return rankprune::max_abs_diff(rankprune::matmul(q.transposed(), q), Matrix::identity(q.cols()));
}

// max over i of |A v_i - sigma_i u_i|
inline double defining_equation_error(const Matrix& a, const rankprune::SvdFactors& f) {
  double worst = 0.0;
  for (std::size_t i = 0; i < f.sigma.size(); ++i)
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double av = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c)
        av += a(r, c) * f.v(c, i);
      worst = std::max(worst, std::abs(av - f.sigma[i] * f.u(r, i)));
    }
  return worst;
}

inline double relative_error(double a, double b, double floor = 1e-5) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

} // namespace rptest
