#pragma once

// delta-rank measurement and the adversarial rank loss.
//
// All rank quantities are taken on the l2-normalized matrix W / ||W||_F, so
// the singular values used below always satisfy sum(sigma^2) = 1.

#include "rankprune/errors.hpp"
#include "rankprune/linalg.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rankprune {

struct RankLossConfig {
  double target_error = 0.2;          // tail energy that select_k aims for
  double lambda = 0.1;                // weight of the rank term in the combined objective
  double delta_rank_tolerance = 0.1;  // delta used for reporting delta-ranks
  double norm_floor = 1e-12;

  void validate() const {
    if (!(target_error > 0.0 && target_error < 1.0))
      throw DomainError("rank.target_error must lie in (0, 1), got " + std::to_string(target_error));
    if (!std::isfinite(lambda) || lambda < 0.0)
      throw DomainError("rank.lambda must be finite and >= 0, got " + std::to_string(lambda));
    if (!(delta_rank_tolerance > 0.0 && delta_rank_tolerance < 1.0))
      throw DomainError("rank.delta must lie in (0, 1), got " + std::to_string(delta_rank_tolerance));
    if (!(norm_floor > 0.0))
      throw DomainError("rank.norm_floor must be > 0");
  }
  friend bool operator==(const RankLossConfig&, const RankLossConfig&) = default;
};

inline constexpr double kDefaultNormFloor = 1e-12;
inline constexpr double kSpectrumGap = 1e-10;

inline Matrix normalize(const Matrix& w, double norm_floor = kDefaultNormFloor) {
  const double n = frobenius_norm(w);
  if (!(n > norm_floor))
    throw DegenerateWeightError("normalize: Frobenius norm " + std::to_string(n) +
                                " is at or below the floor");
  return w * (1.0 / n);
}

/// Truncation rank whose tail energy sum_{i>k} sigma_i^2 is closest to
/// `target_error`, searched over k in [1, r-1]. Ties go to the smaller k.
inline std::size_t select_k(std::span<const double> sigma_normalized, double target_error) {
  const std::size_t r = sigma_normalized.size();
  if (r == 0)
    throw DomainError("select_k: empty spectrum");
  double total = 0.0;
  for (double s : sigma_normalized)
    total += s * s;
  if (std::abs(total - 1.0) > 1e-6)
    throw DomainError("select_k: spectrum is not normalized (sum of squares " +
                      std::to_string(total) + ")");
  if (r == 1)
    return 1;

  // tail[k] = sum_{i>k} sigma_i^2 (1-based k), accumulated from the small end.
  std::vector<double> tail(r + 1, 0.0);
  for (std::size_t k = r; k-- > 0;)
    tail[k] = tail[k + 1] + sigma_normalized[k] * sigma_normalized[k];

  std::size_t best = 1;
  double best_gap = std::abs(tail[1] - target_error);
  for (std::size_t k = 2; k < r; ++k) {
    const double gap = std::abs(tail[k] - target_error);
    if (gap < best_gap) {
      best_gap = gap;
      best = k;
    }
  }
  return best;
}

namespace detail {

inline void require_truncation_rank(std::size_t k, std::size_t r, const char* where) {
  if (k < 1 || k >= r)
    throw DomainError(std::string(where) + ": k=" + std::to_string(k) + " must lie in [1, " +
                      std::to_string(r) + ")");
}

// T = sum_{i>k} 2 sigma_i u_i v_i^T of the normalized spectrum.
inline Matrix tail_term(const SvdFactors& f, std::size_t k) {
  Matrix t(f.u.rows(), f.v.rows());
  for (std::size_t i = k; i < f.sigma.size(); ++i) {
    const double s = 2.0 * f.sigma[i];
    if (s == 0.0)
      continue;
    for (std::size_t a = 0; a < t.rows(); ++a) {
      const double ua = s * f.u(a, i);
      for (std::size_t b = 0; b < t.cols(); ++b)
        t(a, b) += ua * f.v(b, i);
    }
  }
  return t;
}

inline void require_spectral_gap(const SvdFactors& f, std::size_t k) {
  if (!(f.sigma[k - 1] > f.sigma[k] + kSpectrumGap))
    throw DegenerateSpectrumError("sigma_" + std::to_string(k) + " and sigma_" +
                                  std::to_string(k + 1) + " coincide; truncation is not unique");
}

} // namespace detail

/// Tail energy of a normalized spectrum past index k.
inline double tail_energy(std::span<const double> sigma, std::size_t k) {
  double s = 0.0;
  for (std::size_t i = sigma.size(); i > k; --i)
    s += sigma[i - 1] * sigma[i - 1];
  return s;
}

/// -sum_{i>k} sigma_i^2 of W / ||W||_F. Lies in [-1, 0].
inline double rank_loss(const Matrix& w, std::size_t k, double norm_floor = kDefaultNormFloor) {
  const SvdFactors f = svd(normalize(w, norm_floor));
  detail::require_truncation_rank(k, f.sigma.size(), "rank_loss");
  return -tail_energy(f.sigma, k);
}

/// Gradient of rank_loss with respect to the unnormalized W, given the SVD of
/// W / ||W||_F (so callers that already decomposed the matrix pay once):
///   G = -T / ||W|| + W * sum(W .* T) / ||W||^3,  T = sum_{i>k} 2 sigma_i u_i v_i^T.
/// Throws DegenerateSpectrumError when sigma_k and sigma_{k+1} are not separated.
inline Matrix rank_loss_gradient(const Matrix& w, const SvdFactors& normalized, std::size_t k) {
  detail::require_truncation_rank(k, normalized.sigma.size(), "rank_loss_gradient");
  detail::require_spectral_gap(normalized, k);
  const double nrm = frobenius_norm(w);
  const Matrix t = detail::tail_term(normalized, k);
  const double c = hadamard_sum(w, t);
  Matrix g(w.rows(), w.cols());
  const double inv = 1.0 / nrm;
  const double inv3 = inv * inv * inv;
  for (std::size_t i = 0; i < g.size(); ++i)
    g.values()[i] = -t.values()[i] * inv + w.values()[i] * c * inv3;
  return g;
}

inline Matrix rank_loss_gradient(const Matrix& w, std::size_t k, double norm_floor = kDefaultNormFloor) {
  return rank_loss_gradient(w, svd(normalize(w, norm_floor)), k);
}

/// Smallest k whose best rank-k approximation of W / ||W|| is closer than
/// `delta`, read off the normalized spectrum.
inline std::size_t delta_rank_from_spectrum(std::span<const double> sigma_normalized, double delta) {
  if (!(delta > 0.0))
    throw DomainError("delta_rank: delta must be > 0");
  const std::size_t r = sigma_normalized.size();
  std::vector<double> tail(r + 1, 0.0);
  for (std::size_t k = r; k-- > 0;)
    tail[k] = tail[k + 1] + sigma_normalized[k] * sigma_normalized[k];
  for (std::size_t k = 1; k <= r; ++k)
    if (std::sqrt(tail[k]) < delta)
      return k;
  return r;
}

/// A matrix at or below `norm_floor` has delta-rank 0.
inline std::size_t delta_rank(const Matrix& w, double delta, double norm_floor = kDefaultNormFloor) {
  if (!(delta > 0.0))
    throw DomainError("delta_rank: delta must be > 0");
  if (!(frobenius_norm(w) > norm_floor))
    return 0;
  const SvdFactors f = svd(normalize(w, norm_floor));
  return delta_rank_from_spectrum(f.sigma, delta);
}

/// Closed form of W - gamma * rank_loss_gradient(W, k):
///   U ((1 - c gamma / ||W||^3) S + (2 gamma / ||W||) Sbar_{k+1:r}) V^T
/// where S holds the singular values of W itself and Sbar those of W / ||W||.
inline Matrix rank_step_preview(const Matrix& w, std::size_t k, double gamma,
                                double norm_floor = kDefaultNormFloor) {
  if (!(gamma >= 0.0))
    throw DomainError("rank_step_preview: gamma must be >= 0");
  const double nrm = frobenius_norm(w);
  const SvdFactors f = svd(normalize(w, norm_floor));
  detail::require_truncation_rank(k, f.sigma.size(), "rank_step_preview");
  detail::require_spectral_gap(f, k);
  // c = sum(W .* T) = ||W|| * sum_{i>k} 2 sigma_i^2 by orthonormality.
  const double c = nrm * 2.0 * tail_energy(f.sigma, k);
  const double shrink = 1.0 - c * gamma / (nrm * nrm * nrm);
  const double boost = 2.0 * gamma / nrm;
  SvdFactors stepped = f;
  for (std::size_t i = 0; i < stepped.sigma.size(); ++i)
    stepped.sigma[i] = shrink * nrm * f.sigma[i] + (i >= k ? boost * f.sigma[i] : 0.0);
  return stepped.reconstruct();
}

} // namespace rankprune
