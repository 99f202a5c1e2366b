#pragma once

// Dense row-major matrices and a one-sided Jacobi SVD.

#include "rankprune/errors.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rankprune {

class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows_ * cols_)
      throw InvalidInputError("Matrix: " + std::to_string(data_.size()) + " values for a " +
                              std::to_string(rows_) + "x" + std::to_string(cols_) + " matrix");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_)
        throw InvalidInputError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      m(i, i) = d[i];
    return m;
  }
  static Matrix diagonal(std::initializer_list<double> d) {
    return diagonal(std::span<const double>(d.begin(), d.size()));
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  [[nodiscard]] std::span<double> values() noexcept { return data_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return data_; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      out[r] = (*this)(r, c);
    return out;
  }

  [[nodiscard]] bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  [[nodiscard]] Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c)
        t(c, r) = (*this)(r, c);
    return t;
  }

  Matrix& operator*=(double s) noexcept {
    for (auto& v : data_)
      v *= s;
    return *this;
  }
  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i)
      data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i)
      data_[i] -= o.data_[i];
    return *this;
  }

  friend Matrix operator*(Matrix m, double s) noexcept { return m *= s; }
  friend Matrix operator*(double s, Matrix m) noexcept { return m *= s; }
  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  void require_same_shape(const Matrix& o) const {
    if (o.rows_ != rows_ || o.cols_ != cols_)
      throw InvalidInputError("Matrix: shape mismatch " + std::to_string(rows_) + "x" +
                              std::to_string(cols_) + " vs " + std::to_string(o.rows_) + "x" +
                              std::to_string(o.cols_));
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw InvalidInputError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip == 0.0)
        continue;
      for (std::size_t j = 0; j < b.cols(); ++j)
        c(i, j) += aip * b(p, j);
    }
  return c;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInputError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline double frobenius_norm(const Matrix& w) {
  double s = 0.0;
  for (double v : w.values())
    s += v * v;
  return std::sqrt(s);
}

/// Sum over all entries of the elementwise product.
inline double hadamard_sum(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInputError("hadamard_sum: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += a.values()[i] * b.values()[i];
  return s;
}

/// Thin SVD: u is m x r, v is n x r, r = min(m, n).
struct SvdFactors {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;

  [[nodiscard]] std::size_t rank_bound() const noexcept { return sigma.size(); }
  [[nodiscard]] Matrix reconstruct() const;
};

namespace detail {

// n working columns of length `len`, each stored contiguously.
struct ColumnStore {
  std::size_t count = 0;
  std::size_t length = 0;
  std::vector<double> data;

  ColumnStore(std::size_t n, std::size_t len) : count(n), length(len), data(n * len, 0.0) {}
  double* col(std::size_t j) noexcept { return data.data() + j * length; }
  const double* col(std::size_t j) const noexcept { return data.data() + j * length; }
};

// Fills columns [have, count) with unit vectors orthogonal to everything before them.
inline void complete_basis(ColumnStore& basis, std::size_t have) {
  std::vector<double> cand(basis.length);
  for (std::size_t e = 0; e < basis.length && have < basis.count; ++e) {
    std::fill(cand.begin(), cand.end(), 0.0);
    cand[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < have; ++j) {
        const double* b = basis.col(j);
        double d = 0.0;
        for (std::size_t i = 0; i < basis.length; ++i)
          d += b[i] * cand[i];
        for (std::size_t i = 0; i < basis.length; ++i)
          cand[i] -= d * b[i];
      }
    double nrm = 0.0;
    for (double c : cand)
      nrm += c * c;
    nrm = std::sqrt(nrm);
    if (nrm < 0.5)
      continue;
    double* dst = basis.col(have);
    for (std::size_t i = 0; i < basis.length; ++i)
      dst[i] = cand[i] / nrm;
    ++have;
  }
}

// Hestenes one-sided Jacobi for a tall (m >= n) matrix.
inline SvdFactors jacobi_svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  ColumnStore b(n, m);
  ColumnStore v(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double* bj = b.col(j);
    for (std::size_t i = 0; i < m; ++i)
      bj[i] = a(i, j);
    v.col(j)[j] = 1.0;
  }

  constexpr double eps = std::numeric_limits<double>::epsilon();
  constexpr int max_sweeps = 80;
  std::vector<double> sq(n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    // Squared column norms are refreshed each sweep and updated in closed form after every rotation.
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.col(j);
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        acc += bj[i] * bj[i];
      sq[j] = acc;
    }
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      if (sq[p] == 0.0)
        continue;
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = sq[p];
        const double beta = sq[q];
        if (beta == 0.0)
          continue;
        double* bp = b.col(p);
        double* bq = b.col(q);
        double gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i)
          gamma += bp[i] * bq[i];
        if (std::abs(gamma) <= eps * std::sqrt(alpha * beta))
          continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = bp[i], y = bq[i];
          bp[i] = c * x - s * y;
          bq[i] = s * x + c * y;
        }
        double* vp = v.col(p);
        double* vq = v.col(q);
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
        sq[p] = std::max(0.0, alpha - t * gamma);
        sq[q] = beta + t * gamma;
      }
    }
    if (!rotated)
      break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b.col(j);
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      s += bj[i] * bj[i];
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double smax = n ? norms[order[0]] : 0.0;
  const double zero_tol = static_cast<double>(std::max(m, n)) * eps * smax;

  SvdFactors f;
  f.sigma.resize(n);
  ColumnStore u(n, m);
  ColumnStore vs(n, n);
  std::size_t nonzero = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    const double sj = norms[j];
    std::copy_n(v.col(j), n, vs.col(k));
    if (sj > zero_tol && sj > 0.0) {
      f.sigma[k] = sj;
      const double* bj = b.col(j);
      double* uk = u.col(k);
      for (std::size_t i = 0; i < m; ++i)
        uk[i] = bj[i] / sj;
      ++nonzero;
    } else {
      f.sigma[k] = 0.0;
    }
  }

  // One modified Gram-Schmidt pass restores orthogonality lost to small sigma.
  for (std::size_t k = 1; k < nonzero; ++k) {
    double* uk = u.col(k);
    for (std::size_t j = 0; j < k; ++j) {
      const double* uj = u.col(j);
      double d = 0.0;
      for (std::size_t i = 0; i < m; ++i)
        d += uj[i] * uk[i];
      for (std::size_t i = 0; i < m; ++i)
        uk[i] -= d * uj[i];
    }
    double nrm = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      nrm += uk[i] * uk[i];
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < m; ++i)
      uk[i] /= nrm;
  }
  if (nonzero < n)
    complete_basis(u, nonzero);

  f.u = Matrix(m, n);
  f.v = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double* uk = u.col(k);
    const double* vk = vs.col(k);
    for (std::size_t i = 0; i < m; ++i)
      f.u(i, k) = uk[i];
    for (std::size_t i = 0; i < n; ++i)
      f.v(i, k) = vk[i];
  }
  return f;
}

// Flip (u_k, v_k) so the first entry of u_k above `tiny` in magnitude is positive.
inline void canonicalize_signs(SvdFactors& f) {
  constexpr double tiny = 1e-12;
  for (std::size_t k = 0; k < f.sigma.size(); ++k) {
    for (std::size_t i = 0; i < f.u.rows(); ++i) {
      const double x = f.u(i, k);
      if (std::abs(x) <= tiny)
        continue;
      if (x < 0.0) {
        for (std::size_t r = 0; r < f.u.rows(); ++r)
          f.u(r, k) = -f.u(r, k);
        for (std::size_t r = 0; r < f.v.rows(); ++r)
          f.v(r, k) = -f.v(r, k);
      }
      break;
    }
  }
}


// Thin SVD of any shape, before sign canonicalization.
inline SvdFactors svd_dense(const Matrix& w) {
  if (w.rows() >= w.cols())
    return jacobi_svd_tall(w);
  SvdFactors t = jacobi_svd_tall(w.transposed());
  SvdFactors f;
  f.u = std::move(t.v);
  f.v = std::move(t.u);
  f.sigma = std::move(t.sigma);
  return f;
}

inline void complete_matrix_columns(Matrix& q, std::size_t have) {
  ColumnStore cs(q.cols(), q.rows());
  for (std::size_t j = 0; j < have; ++j)
    for (std::size_t i = 0; i < q.rows(); ++i)
      cs.col(j)[i] = q(i, j);
  complete_basis(cs, have);
  for (std::size_t j = have; j < q.cols(); ++j)
    for (std::size_t i = 0; i < q.rows(); ++i)
      q(i, j) = cs.col(j)[i];
}

// Rows and columns that are entirely zero contribute nothing but cost a full
// Jacobi sweep each; the decomposition runs on the nonzero block and is
// embedded back, with the zero singular directions completed afterwards.
inline SvdFactors svd_compressed(const Matrix& w) {
  std::vector<std::size_t> rows, cols;
  std::vector<bool> col_used(w.cols(), false);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    bool any = false;
    for (std::size_t j = 0; j < w.cols(); ++j)
      if (w(i, j) != 0.0) {
        any = true;
        col_used[j] = true;
      }
    if (any)
      rows.push_back(i);
  }
  for (std::size_t j = 0; j < w.cols(); ++j)
    if (col_used[j])
      cols.push_back(j);
  if (rows.size() == w.rows() && cols.size() == w.cols())
    return svd_dense(w);

  const std::size_t r = std::min(w.rows(), w.cols());
  SvdFactors f;
  f.u = Matrix(w.rows(), r);
  f.v = Matrix(w.cols(), r);
  f.sigma.assign(r, 0.0);
  std::size_t have = 0;
  if (!rows.empty()) {
    Matrix sub(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j)
        sub(i, j) = w(rows[i], cols[j]);
    const SvdFactors fs = svd_dense(sub);
    // Only directions with nonzero sigma are kept; the rest are re-completed in the full space.
    for (std::size_t k = 0; k < fs.sigma.size() && fs.sigma[k] > 0.0; ++k, ++have) {
      f.sigma[k] = fs.sigma[k];
      for (std::size_t i = 0; i < rows.size(); ++i)
        f.u(rows[i], k) = fs.u(i, k);
      for (std::size_t j = 0; j < cols.size(); ++j)
        f.v(cols[j], k) = fs.v(j, k);
    }
  }
  complete_matrix_columns(f.u, have);
  complete_matrix_columns(f.v, have);
  return f;
}

} // namespace detail

/// Singular value decomposition W = U diag(sigma) V^T.
///
/// sigma is descending and non-negative. Singular values below
/// max(m,n) * eps * sigma_max are reported as exactly 0 and their singular
/// vectors are completed to an orthonormal set. Signs are fixed so that the
/// first non-negligible entry of every u_i is positive.
inline SvdFactors svd(const Matrix& w) {
  if (w.rows() == 0 || w.cols() == 0)
    throw InvalidInputError("svd: empty matrix");
  if (!w.all_finite())
    throw InvalidInputError("svd: matrix has non-finite entries");
  SvdFactors f = detail::svd_compressed(w);
  detail::canonicalize_signs(f);
  return f;
}

/// Sum of the first k rank-one terms sigma_i u_i v_i^T.
inline Matrix truncate(const SvdFactors& f, std::size_t k) {
  if (k < 1 || k > f.sigma.size())
    throw DomainError("truncate: k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(f.sigma.size()) + "]");
  const std::size_t m = f.u.rows();
  const std::size_t n = f.v.rows();
  Matrix out(m, n);
  for (std::size_t t = 0; t < k; ++t) {
    const double s = f.sigma[t];
    if (s == 0.0)
      continue;
    for (std::size_t i = 0; i < m; ++i) {
      const double ui = s * f.u(i, t);
      for (std::size_t j = 0; j < n; ++j)
        out(i, j) += ui * f.v(j, t);
    }
  }
  return out;
}

inline Matrix SvdFactors::reconstruct() const { return truncate(*this, sigma.size()); }

/// Frobenius distance to the best rank-k approximation: sqrt(sum_{i>k} sigma_i^2).
inline double low_rank_error(const SvdFactors& f, std::size_t k) {
  if (k > f.sigma.size())
    throw DomainError("low_rank_error: k=" + std::to_string(k) + " exceeds " +
                      std::to_string(f.sigma.size()));
  double s = 0.0;
  for (std::size_t i = f.sigma.size(); i > k; --i)
    s += f.sigma[i - 1] * f.sigma[i - 1];
  return std::sqrt(s);
}

} // namespace rankprune
