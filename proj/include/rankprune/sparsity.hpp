#pragma once

// Sparsity schedules and the prune-and-grow mask update.

#include "rankprune/errors.hpp"
#include "rankprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace rankprune {

enum class ScheduleKind { cubic, linear };

inline const char* to_string(ScheduleKind k) { return k == ScheduleKind::cubic ? "cubic" : "linear"; }

struct SparsitySchedule {
  double final_sparsity = 0.9;
  std::size_t prune_steps = 2000;
  std::size_t update_interval = 100;
  std::size_t total_steps = 3000;
  ScheduleKind kind = ScheduleKind::cubic;

  void validate() const {
    if (!(final_sparsity >= 0.0 && final_sparsity < 1.0))
      throw DomainError("final_sparsity must lie in [0, 1), got " + std::to_string(final_sparsity));
    if (prune_steps == 0)
      throw DomainError("prune_steps must be positive");
    if (update_interval == 0)
      throw DomainError("update_interval must be positive");
    if (total_steps < prune_steps)
      throw DomainError("total_steps (" + std::to_string(total_steps) + ") must be >= prune_steps (" +
                        std::to_string(prune_steps) + ")");
  }
  friend bool operator==(const SparsitySchedule&, const SparsitySchedule&) = default;
};

struct GrowSchedule {
  double alpha0 = 0.3;

  void validate() const {
    if (!(alpha0 > 0.0 && alpha0 < 1.0))
      throw DomainError("alpha0 must lie in (0, 1), got " + std::to_string(alpha0));
  }
  friend bool operator==(const GrowSchedule&, const GrowSchedule&) = default;
};

inline double target_sparsity(const SparsitySchedule& s, std::size_t t) {
  if (t >= s.prune_steps)
    return s.final_sparsity;
  const double progress = static_cast<double>(t) / static_cast<double>(s.prune_steps);
  if (s.kind == ScheduleKind::linear)
    return s.final_sparsity * progress;
  const double rest = 1.0 - progress;
  return s.final_sparsity * (1.0 - rest * rest * rest);
}

/// Cosine-annealed fraction of each layer's budget that is re-opened for regrowth.
inline double grow_fraction(const GrowSchedule& g, const SparsitySchedule& s, std::size_t t) {
  const double x = static_cast<double>(std::min(t, s.prune_steps)) / static_cast<double>(s.prune_steps);
  return 0.5 * g.alpha0 * (1.0 + std::cos(std::numbers::pi * x));
}

/// Number of active weights for a layer of `size` entries at `density`:
/// ceil(density * size), at least 1 and at most size. The 1e-9 slack absorbs
/// round-off in densities that were themselves computed as count / size.
inline std::size_t layer_budget(double density, std::size_t size) {
  const double raw = std::ceil(density * static_cast<double>(size) - 1e-9);
  const auto b = raw <= 1.0 ? std::size_t{1} : static_cast<std::size_t>(raw);
  return std::min(b, size);
}

/// Keeps the globally largest ceil(density * total) magnitudes across all
/// layers and returns the fraction kept in each layer (floored at one weight).
///
/// Ties in magnitude prefer currently active positions (when masks are given),
/// then the lower layer index, then the lower flat index.
inline std::vector<double> global_density_split(std::span<const Tensor> weights, double density,
                                                std::span<const Mask> masks = {}) {
  if (!(density > 0.0 && density <= 1.0))
    throw DomainError("global_density_split: density must lie in (0, 1], got " + std::to_string(density));
  if (!masks.empty() && masks.size() != weights.size())
    throw ShapeError("global_density_split: mask count differs from layer count");

  struct Entry {
    double mag;
    std::uint8_t active;
    std::uint32_t layer;
    std::uint32_t index;
  };
  std::vector<Entry> all;
  std::size_t total = 0;
  for (const auto& w : weights)
    total += w.size();
  all.reserve(total);
  for (std::uint32_t l = 0; l < weights.size(); ++l)
    for (std::uint32_t i = 0; i < weights[l].size(); ++i)
      all.push_back({std::abs(weights[l][i]),
                     static_cast<std::uint8_t>(masks.empty() ? 1 : masks[l].bits[i]), l, i});

  const std::size_t keep = std::min(total, static_cast<std::size_t>(std::ceil(density * static_cast<double>(total) - 1e-9)));
  auto before = [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag)
      return a.mag > b.mag;
    if (a.active != b.active)
      return a.active > b.active;
    if (a.layer != b.layer)
      return a.layer < b.layer;
    return a.index < b.index;
  };
  if (keep < total)
    std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), before);

  std::vector<std::size_t> kept(weights.size(), 0);
  for (std::size_t i = 0; i < keep; ++i)
    ++kept[all[i].layer];

  std::vector<double> out(weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const std::size_t n = std::max<std::size_t>(kept[l], 1);
    out[l] = static_cast<double>(n) / static_cast<double>(weights[l].size());
  }
  return out;
}

namespace detail {

// Positions ordered by descending |score|, ties to the smaller index.
inline void sort_by_magnitude(std::vector<std::size_t>& idx, std::span<const double> score) {
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double x = std::abs(score[a]), y = std::abs(score[b]);
    return x != y ? x > y : a < b;
  });
}

} // namespace detail

/// Keeps the ceil(keep_density * size) largest-|w| positions among the active ones.
inline Mask prune_layer(const Tensor& w, const Mask& m, double keep_density) {
  if (w.shape != m.shape)
    throw ShapeError("prune_layer: weight and mask shapes differ");
  if (!(keep_density > 0.0 && keep_density <= 1.0))
    throw DomainError("prune_layer: keep_density must lie in (0, 1]");
  const std::size_t budget = layer_budget(keep_density, w.size());
  const std::size_t active = m.active_count();
  if (budget > active)
    throw ScheduleError("prune_layer: budget " + std::to_string(budget) + " exceeds " +
                        std::to_string(active) + " active weights");
  std::vector<std::size_t> idx;
  idx.reserve(active);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.bits[i])
      idx.push_back(i);
  detail::sort_by_magnitude(idx, w.data);
  Mask out(m.shape, false);
  for (std::size_t i = 0; i < budget; ++i)
    out.bits[idx[i]] = 1;
  return out;
}

/// Activates the inactive positions with the largest |grad| until the layer
/// holds ceil(target_density * size) active weights.
inline Mask grow_layer(const Tensor& dense_grad, const Mask& m, double target_density) {
  if (dense_grad.shape != m.shape)
    throw ShapeError("grow_layer: gradient and mask shapes differ");
  if (!(target_density > 0.0 && target_density <= 1.0))
    throw DomainError("grow_layer: target_density must lie in (0, 1]");
  const std::size_t budget = layer_budget(target_density, m.size());
  const std::size_t active = m.active_count();
  if (budget < active)
    throw ScheduleError("grow_layer: budget " + std::to_string(budget) + " is below " +
                        std::to_string(active) + " active weights");
  std::vector<std::size_t> idx;
  idx.reserve(m.size() - active);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!m.bits[i])
      idx.push_back(i);
  detail::sort_by_magnitude(idx, dense_grad.data);
  Mask out = m;
  for (std::size_t i = 0; i < budget - active; ++i)
    out.bits[idx[i]] = 1;
  return out;
}

struct LayerMaskUpdate {
  std::size_t budget = 0;   // active weights after the update
  std::size_t dropped = 0;  // previously active, now pruned
  std::size_t grown = 0;    // previously pruned, now active
  std::vector<std::size_t> reset;  // positions whose value was zeroed (pruned or freshly grown)
};

struct MaskUpdateReport {
  std::size_t step = 0;
  double density = 1.0;
  double grow_fraction = 0.0;
  std::vector<LayerMaskUpdate> layers;
};

/// One prune-and-grow step over all prunable layers.
///
/// Layer densities come from a global magnitude split at 1 - target_sparsity(t);
/// each layer is pruned to (1 - alpha_t) of its share by |w| and regrown to its
/// share by |grad|. Only positions that survive the prune step keep their
/// value; grown positions (including ones pruned and regrown in the same
/// update) start at zero, as do pruned ones.
inline MaskUpdateReport update_masks(std::span<MaskedTensor* const> layers, std::span<const Tensor> dense_grads,
                                     const SparsitySchedule& sched, const GrowSchedule& grow, std::size_t t) {
  if (t % sched.update_interval != 0 || t > sched.prune_steps)
    throw ScheduleError("update_masks: step " + std::to_string(t) +
                        " is not a mask-update step of the schedule");
  if (dense_grads.size() != layers.size())
    throw ShapeError("update_masks: gradient count differs from layer count");

  std::vector<Tensor> effective;
  std::vector<Mask> masks;
  effective.reserve(layers.size());
  masks.reserve(layers.size());
  for (const MaskedTensor* l : layers) {
    effective.push_back(l->effective());
    masks.push_back(l->mask);
  }

  MaskUpdateReport report;
  report.step = t;
  report.density = 1.0 - target_sparsity(sched, t);
  report.grow_fraction = grow_fraction(grow, sched, t);
  const std::vector<double> share = global_density_split(effective, report.density, masks);

  for (std::size_t l = 0; l < layers.size(); ++l) {
    MaskedTensor& layer = *layers[l];
    const Mask pruned = prune_layer(effective[l], layer.mask, (1.0 - report.grow_fraction) * share[l]);
    const Mask next = grow_layer(dense_grads[l], pruned, share[l]);
    LayerMaskUpdate u;
    for (std::size_t i = 0; i < next.size(); ++i) {
      const bool was = layer.mask.bits[i] != 0;
      const bool now = next.bits[i] != 0;
      if (was && !now)
        ++u.dropped;
      if (!was && now)
        ++u.grown;
      if (!pruned.bits[i]) {
        layer.weight[i] = 0.0;
        u.reset.push_back(i);
      }
    }
    u.budget = next.active_count();
    layer.mask = next;
    report.layers.push_back(u);
  }
  return report;
}

} // namespace rankprune
