#pragma once

#include "rankprune/errors.hpp"

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace rankprune {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i)
      out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape))
      throw ShapeError("Tensor: " + std::to_string(data.size()) + " values for shape " +
                       shape_string(shape));
  }

  [[nodiscard]] std::size_t size() const noexcept { return data.size(); }
  double& operator[](std::size_t i) noexcept { return data[i]; }
  double operator[](std::size_t i) const noexcept { return data[i]; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Binary keep/prune pattern. 1 = active, 0 = pruned.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  explicit Mask(Shape s, bool active = true)
      : shape(std::move(s)), bits(shape_size(shape), active ? 1 : 0) {}

  [[nodiscard]] std::size_t size() const noexcept { return bits.size(); }
  [[nodiscard]] bool active(std::size_t i) const noexcept { return bits[i] != 0; }
  [[nodiscard]] std::size_t active_count() const noexcept {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  [[nodiscard]] double density() const noexcept {
    return bits.empty() ? 0.0 : static_cast<double>(active_count()) / static_cast<double>(bits.size());
  }
  friend bool operator==(const Mask&, const Mask&) = default;
};

/// A stored weight together with its mask. Only `effective()` enters the forward pass.
struct MaskedTensor {
  Tensor weight;
  Mask mask;

  MaskedTensor() = default;
  explicit MaskedTensor(Tensor w) : weight(std::move(w)), mask(weight.shape) {}
  MaskedTensor(Tensor w, Mask m) : weight(std::move(w)), mask(std::move(m)) {
    if (weight.shape != mask.shape)
      throw ShapeError("MaskedTensor: weight " + shape_string(weight.shape) + " vs mask " +
                       shape_string(mask.shape));
  }

  [[nodiscard]] Tensor effective() const {
    Tensor e(weight.shape);
    for (std::size_t i = 0; i < e.size(); ++i)
      e[i] = mask.bits[i] ? weight[i] : 0.0;
    return e;
  }
  friend bool operator==(const MaskedTensor&, const MaskedTensor&) = default;
};

} // namespace rankprune
