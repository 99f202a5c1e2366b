#pragma once

#include "rankprune/errors.hpp"
#include "rankprune/model.hpp"
#include "rankprune/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rankprune {

struct Dataset {
  Shape sample_shape;
  std::vector<double> inputs;  // sample-major
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
  [[nodiscard]] std::size_t features() const noexcept { return shape_size(sample_shape); }

  [[nodiscard]] Batch gather(std::span<const std::size_t> idx) const {
    const std::size_t f = features();
    Batch b;
    Shape s{idx.size()};
    s.insert(s.end(), sample_shape.begin(), sample_shape.end());
    b.inputs = Tensor(s);
    b.labels.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(inputs.begin() + static_cast<std::ptrdiff_t>(idx[k] * f), f,
                  b.inputs.data.begin() + static_cast<std::ptrdiff_t>(k * f));
      b.labels.push_back(labels[idx[k]]);
    }
    return b;
  }

  /// Consecutive batches in storage order; the last one may be short.
  [[nodiscard]] std::vector<Batch> batches(std::size_t batch_size) const {
    std::vector<Batch> out;
    for (std::size_t start = 0; start < size(); start += batch_size) {
      std::vector<std::size_t> idx;
      for (std::size_t i = start; i < std::min(size(), start + batch_size); ++i)
        idx.push_back(i);
      out.push_back(gather(idx));
    }
    return out;
  }

  [[nodiscard]] Batch all() const {
    std::vector<std::size_t> idx(size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      idx[i] = i;
    return gather(idx);
  }
};

struct SyntheticDatasetSpec {
  std::size_t num_classes = 10;
  std::size_t features = 64;
  std::size_t samples_per_class = 200;
  double cluster_spread = 3.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_classes < 2)
      throw DomainError("num_classes must be >= 2");
    if (features == 0 || samples_per_class == 0)
      throw DomainError("features and samples_per_class must be positive");
    if (!(cluster_spread > 0.0))
      throw DomainError("cluster_spread must be > 0");
  }
  friend bool operator==(const SyntheticDatasetSpec&, const SyntheticDatasetSpec&) = default;
};

namespace detail {

// Box-Muller on the shared 53-bit uniform; avoids implementation-defined
// std::normal_distribution so datasets are identical across standard libraries.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0)
    u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace detail

/// Isotropic Gaussian clusters. Class centers are N(0, I); samples are
/// center + spread * N(0, I). Samples are interleaved by class
/// (0, 1, ..., K-1, 0, 1, ...). The `stream` argument selects an independent
/// sample draw around the same centers, used for held-out splits.
inline Dataset make_blobs(const SyntheticDatasetSpec& spec, std::uint64_t stream = 0) {
  spec.validate();
  std::mt19937_64 center_rng(spec.seed);
  std::vector<double> centers(spec.num_classes * spec.features);
  for (double& c : centers)
    c = detail::standard_normal(center_rng);

  std::mt19937_64 rng(spec.seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
  Dataset d;
  d.sample_shape = {spec.features};
  d.inputs.reserve(spec.num_classes * spec.samples_per_class * spec.features);
  for (std::size_t s = 0; s < spec.samples_per_class; ++s)
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
      for (std::size_t f = 0; f < spec.features; ++f)
        d.inputs.push_back(centers[k * spec.features + f] + spec.cluster_spread * detail::standard_normal(rng));
      d.labels.push_back(static_cast<int>(k));
    }
  return d;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
  if (off + 4 > b.size())
    throw IdxTruncatedError("'" + path + "': truncated IDX header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

} // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair (unsigned byte data). Pixels are scaled to
/// [0, 1]; each sample has shape 1 x rows x cols.
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (const auto m = detail::read_be32(img, 0, images_path); m != kIdxImageMagic)
    throw IdxMagicError("'" + images_path + "': magic " + std::to_string(m) + " is not an IDX image file (2051)");
  if (const auto m = detail::read_be32(lab, 0, labels_path); m != kIdxLabelMagic)
    throw IdxMagicError("'" + labels_path + "': magic " + std::to_string(m) + " is not an IDX label file (2049)");
  const std::size_t count = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t nlabels = detail::read_be32(lab, 4, labels_path);
  if (count != nlabels)
    throw IdxCountMismatchError(std::to_string(count) + " images but " + std::to_string(nlabels) + " labels");
  if (img.size() < 16 + count * rows * cols)
    throw IdxTruncatedError("'" + images_path + "': truncated pixel data");
  if (lab.size() < 8 + nlabels)
    throw IdxTruncatedError("'" + labels_path + "': truncated label data");

  Dataset d;
  d.sample_shape = {1, rows, cols};
  d.inputs.resize(count * rows * cols);
  for (std::size_t i = 0; i < d.inputs.size(); ++i)
    d.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    d.labels[i] = static_cast<int>(lab[8 + i]);
  return d;
}

inline std::vector<Batch> load_idx_images(const std::string& images_path, const std::string& labels_path,
                                          std::size_t batch_size = 1) {
  return load_idx_dataset(images_path, labels_path).batches(batch_size);
}

} // namespace rankprune
