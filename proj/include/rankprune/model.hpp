#pragma once

// Small feed-forward networks with exact manual backpropagation.
//
// Every prunable weight lives in a MaskedTensor; the forward pass only sees
// the effective weight W .* M. Gradients are taken with respect to that
// effective weight and are defined at every position, pruned ones included.

#include "rankprune/errors.hpp"
#include "rankprune/linalg.hpp"
#include "rankprune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rankprune {

enum class LayerKind { dense, conv2d };
enum class Activation { relu, none };

/// Architecture entry. `kernel` is only meaningful for conv2d (square, odd).
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t out = 0;
  std::size_t kernel = 0;
  Activation activation = Activation::relu;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// "dense:<out>:<relu|none>" or "conv:<out>:<kernel>:<relu|none>".
inline LayerSpec parse_layer_spec(std::string_view text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  parts.push_back(cur);
  auto to_count = [&](const std::string& s) -> std::size_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw ShapeError("layer spec '" + std::string(text) + "': '" + s + "' is not a positive integer");
    const auto v = std::stoull(s);
    if (v == 0)
      throw ShapeError("layer spec '" + std::string(text) + "': sizes must be positive");
    return static_cast<std::size_t>(v);
  };
  auto to_act = [&](const std::string& s) {
    if (s == "relu")
      return Activation::relu;
    if (s == "none")
      return Activation::none;
    throw ShapeError("layer spec '" + std::string(text) + "': unknown activation '" + s + "'");
  };
  LayerSpec spec;
  if (parts.size() == 3 && parts[0] == "dense") {
    spec.kind = LayerKind::dense;
    spec.out = to_count(parts[1]);
    spec.activation = to_act(parts[2]);
  } else if (parts.size() == 4 && parts[0] == "conv") {
    spec.kind = LayerKind::conv2d;
    spec.out = to_count(parts[1]);
    spec.kernel = to_count(parts[2]);
    if (spec.kernel % 2 == 0)
      throw ShapeError("layer spec '" + std::string(text) + "': kernel size must be odd");
    spec.activation = to_act(parts[3]);
  } else {
    throw ShapeError("layer spec '" + std::string(text) + "' is not dense:<out>:<act> or conv:<out>:<k>:<act>");
  }
  return spec;
}

inline std::string format_layer_spec(const LayerSpec& s) {
  const char* act = s.activation == Activation::relu ? "relu" : "none";
  if (s.kind == LayerKind::dense)
    return "dense:" + std::to_string(s.out) + ":" + act;
  return "conv:" + std::to_string(s.out) + ":" + std::to_string(s.kernel) + ":" + act;
}

struct Layer {
  LayerKind kind = LayerKind::dense;
  Activation activation = Activation::relu;
  MaskedTensor param;        // dense: out x in; conv: out x in x k x k
  std::vector<double> bias;  // one per output unit / channel
  Shape in_shape;            // per-sample input shape
  Shape out_shape;           // per-sample output shape

  [[nodiscard]] std::size_t out_units() const noexcept { return param.weight.shape[0]; }
  [[nodiscard]] std::size_t fan_in() const noexcept { return param.weight.size() / param.weight.shape[0]; }
};

struct Batch {
  Tensor inputs;            // batch x features, or batch x channels x h x w
  std::vector<int> labels;  // class indices

  [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
};

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine draw.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

class Network {
public:
  Network() = default;

  /// Builds the layer stack for per-sample `input_shape` and initializes all
  /// weights uniformly in +-sqrt(6 / fan_in) (He), biases at zero.
  Network(Shape input_shape, std::span<const LayerSpec> specs, std::uint64_t seed)
      : input_shape_(std::move(input_shape)) {
    if (specs.empty())
      throw ShapeError("Network: at least one layer is required");
    if (shape_size(input_shape_) == 0)
      throw ShapeError("Network: empty input shape");
    Shape cur = input_shape_;
    std::mt19937_64 rng(seed);
    for (const LayerSpec& spec : specs) {
      Layer l;
      l.kind = spec.kind;
      l.activation = spec.activation;
      l.in_shape = cur;
      if (spec.kind == LayerKind::dense) {
        const std::size_t in = shape_size(cur);
        l.param = MaskedTensor(Tensor({spec.out, in}));
        l.out_shape = {spec.out};
      } else {
        if (cur.size() != 3)
          throw ShapeError("Network: conv layer needs a channels x h x w input, got " + shape_string(cur));
        l.param = MaskedTensor(Tensor({spec.out, cur[0], spec.kernel, spec.kernel}));
        l.out_shape = {spec.out, cur[1], cur[2]};
      }
      l.bias.assign(spec.out, 0.0);
      const double limit = std::sqrt(6.0 / static_cast<double>(l.fan_in()));
      for (double& w : l.param.weight.data)
        w = (2.0 * unit_uniform(rng) - 1.0) * limit;
      cur = l.out_shape;
      specs_.push_back(spec);
      layers_.push_back(std::move(l));
    }
  }

  [[nodiscard]] const Shape& input_shape() const noexcept { return input_shape_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return shape_size(layers_.back().out_shape); }
  [[nodiscard]] std::span<const Layer> layers() const noexcept { return layers_; }
  [[nodiscard]] std::span<const LayerSpec> specs() const noexcept { return specs_; }
  [[nodiscard]] std::size_t size() const noexcept { return layers_.size(); }
  [[nodiscard]] const Layer& layer(std::size_t i) const { return layers_.at(i); }

  /// Mutable access. Invalidates outstanding forward caches.
  Layer& layer_mut(std::size_t i) {
    ++generation_;
    return layers_.at(i);
  }
  [[nodiscard]] std::vector<MaskedTensor*> masked_tensors() {
    ++generation_;
    std::vector<MaskedTensor*> out;
    for (auto& l : layers_)
      out.push_back(&l.param);
    return out;
  }
  void touch() noexcept { ++generation_; }
  [[nodiscard]] std::uint64_t generation() const noexcept { return generation_; }

  [[nodiscard]] std::size_t prunable_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_)
      n += l.param.weight.size();
    return n;
  }
  [[nodiscard]] std::size_t active_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_)
      n += l.param.mask.active_count();
    return n;
  }
  /// 1 - active / prunable, counted from the masks.
  [[nodiscard]] double sparsity() const noexcept {
    return 1.0 - static_cast<double>(active_count()) / static_cast<double>(prunable_count());
  }

private:
  Shape input_shape_;
  std::vector<LayerSpec> specs_;
  std::vector<Layer> layers_;
  std::uint64_t generation_ = 0;
};

/// Dense layers are returned as is; a conv weight (o, i, kh, kw) becomes the
/// o x (i*kh*kw) matrix with column index (c*kh + y)*kw + x. Because the
/// storage is row-major in that same order, the map is a plain reinterpretation.
inline Matrix reshape_to_matrix(const Tensor& weight) {
  if (weight.shape.size() != 2 && weight.shape.size() != 4)
    throw ShapeError("reshape_to_matrix: expected a 2-D or 4-D weight, got " + shape_string(weight.shape));
  const std::size_t rows = weight.shape[0];
  return Matrix(rows, weight.size() / rows, weight.data);
}

inline Matrix reshape_to_matrix(const Layer& layer) { return reshape_to_matrix(layer.param.effective()); }

inline Tensor matrix_to_weight(const Matrix& m, const Shape& shape) {
  if (shape.empty() || m.rows() != shape[0] || m.size() != shape_size(shape))
    throw ShapeError("matrix_to_weight: " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                     " does not fit shape " + shape_string(shape));
  return Tensor(shape, std::vector<double>(m.values().begin(), m.values().end()));
}

struct ForwardCache {
  std::uint64_t generation = 0;
  std::size_t batch = 0;
  std::vector<std::vector<double>> inputs;  // layer inputs, batch-major
  std::vector<std::vector<double>> pre;     // pre-activation outputs
  std::vector<Tensor> effective;            // W .* M used in this pass
};

struct ForwardResult {
  Tensor logits;  // batch x classes
  ForwardCache cache;
};

struct LayerGradient {
  Tensor weight;  // d loss / d effective weight, every position
  std::vector<double> bias;
};
using Gradients = std::vector<LayerGradient>;

namespace detail {

// Nonzero column indices per row of an out x in weight; empty when the
// weight is dense enough that plain loops are faster.
struct RowSupport {
  bool sparse = false;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> cols;

  RowSupport(const Tensor& e) {
    const std::size_t out = e.shape[0], in = e.shape[1];
    const auto nnz = static_cast<std::size_t>(std::count_if(e.data.begin(), e.data.end(), [](double v) { return v != 0.0; }));
    if (2 * nnz > e.size())
      return;
    sparse = true;
    offsets.reserve(out + 1);
    cols.reserve(nnz);
    offsets.push_back(0);
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i)
        if (e.data[o * in + i] != 0.0)
          cols.push_back(i);
      offsets.push_back(cols.size());
    }
  }
};

// Zero weights are skipped; the summation order over the remaining terms is
// unchanged, so sparse and dense paths give identical results.
inline void dense_forward(const Tensor& e, std::span<const double> bias, std::span<const double> x,
                          std::size_t batch, std::vector<double>& z) {
  const std::size_t out = e.shape[0], in = e.shape[1];
  const RowSupport support(e);
  z.assign(batch * out, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * in;
    double* zb = z.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = e.data.data() + o * in;
      double s = 0.0;
      if (support.sparse) {
        for (std::size_t p = support.offsets[o]; p < support.offsets[o + 1]; ++p)
          s += wr[support.cols[p]] * xb[support.cols[p]];
      } else {
        for (std::size_t i = 0; i < in; ++i)
          s += wr[i] * xb[i];
      }
      zb[o] = s + bias[o];
    }
  }
}

inline void conv_forward(const Tensor& e, std::span<const double> bias, std::span<const double> x,
                         std::size_t batch, const Shape& in_shape, std::vector<double>& z) {
  const std::size_t oc = e.shape[0], ic = e.shape[1], kh = e.shape[2], kw = e.shape[3];
  const std::size_t h = in_shape[1], w = in_shape[2];
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  z.assign(batch * oc * h * w, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < oc; ++o) {
      double* zo = z.data() + (b * oc + o) * h * w;
      for (std::size_t p = 0; p < h * w; ++p)
        zo[p] = bias[o];
      for (std::size_t c = 0; c < ic; ++c) {
        const double* xc = x.data() + (b * ic + c) * h * w;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const double wt = e.data[((o * ic + c) * kh + i) * kw + j];
            if (wt == 0.0)
              continue;
            for (std::size_t y = 0; y < h; ++y) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + i) - ph;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h))
                continue;
              for (std::size_t xx = 0; xx < w; ++xx) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + j) - pw;
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w))
                  continue;
                zo[y * w + xx] += wt * xc[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
              }
            }
          }
      }
    }
}

inline void conv_backward(const Tensor& e, std::span<const double> dz, std::span<const double> x,
                          std::size_t batch, const Shape& in_shape, Tensor& dw, std::vector<double>& db,
                          std::vector<double>* dx) {
  const std::size_t oc = e.shape[0], ic = e.shape[1], kh = e.shape[2], kw = e.shape[3];
  const std::size_t h = in_shape[1], w = in_shape[2];
  const std::ptrdiff_t ph = static_cast<std::ptrdiff_t>(kh / 2), pw = static_cast<std::ptrdiff_t>(kw / 2);
  if (dx)
    dx->assign(batch * ic * h * w, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < oc; ++o) {
      const double* g = dz.data() + (b * oc + o) * h * w;
      for (std::size_t p = 0; p < h * w; ++p)
        db[o] += g[p];
      for (std::size_t c = 0; c < ic; ++c) {
        const double* xc = x.data() + (b * ic + c) * h * w;
        double* dxc = dx ? dx->data() + (b * ic + c) * h * w : nullptr;
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t widx = ((o * ic + c) * kh + i) * kw + j;
            const double wt = e.data[widx];
            double acc = 0.0;
            for (std::size_t y = 0; y < h; ++y) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + i) - ph;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h))
                continue;
              for (std::size_t xx = 0; xx < w; ++xx) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + j) - pw;
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w))
                  continue;
                const std::size_t src = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
                acc += g[y * w + xx] * xc[src];
                if (dxc)
                  dxc[src] += g[y * w + xx] * wt;
              }
            }
            dw.data[widx] += acc;
          }
      }
    }
}

} // namespace detail

inline ForwardResult forward(const Network& net, const Batch& batch) {
  const std::size_t n = batch.size();
  const std::size_t features = shape_size(net.input_shape());
  if (n == 0)
    throw ShapeError("forward: empty batch");
  if (batch.inputs.shape.empty() || batch.inputs.shape[0] != n || batch.inputs.size() != n * features)
    throw ShapeError("forward: inputs " + shape_string(batch.inputs.shape) + " do not match " +
                     std::to_string(n) + " samples of shape " + shape_string(net.input_shape()));

  ForwardResult r;
  ForwardCache& c = r.cache;
  c.generation = net.generation();
  c.batch = n;
  std::vector<double> act(batch.inputs.data);
  for (const Layer& l : net.layers()) {
    c.effective.push_back(l.param.effective());
    c.inputs.push_back(act);
    std::vector<double> z;
    if (l.kind == LayerKind::dense)
      detail::dense_forward(c.effective.back(), l.bias, act, n, z);
    else
      detail::conv_forward(c.effective.back(), l.bias, act, n, l.in_shape, z);
    act = z;
    if (l.activation == Activation::relu)
      for (double& v : act)
        v = v > 0.0 ? v : 0.0;
    c.pre.push_back(std::move(z));
  }
  r.logits = Tensor({n, net.num_classes()}, std::move(act));
  return r;
}

/// Mean softmax cross-entropy.
inline double task_loss(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (logits.shape.size() != 2 || logits.shape[0] != n)
    throw ShapeError("task_loss: logits/labels mismatch");
  const std::size_t k = logits.shape[1];
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.data.data() + b * k;
    const double m = *std::max_element(z, z + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      s += std::exp(z[j] - m);
    total += m + std::log(s) - z[labels[b]];
  }
  return total / static_cast<double>(n);
}

/// Fraction of rows whose argmax (first on ties) equals the label.
inline double accuracy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = labels.size();
  const std::size_t k = logits.shape[1];
  std::size_t hit = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.data.data() + b * k;
    if (static_cast<int>(std::max_element(z, z + k) - z) == labels[b])
      ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

/// Which weight-gradient entries backward fills in.
enum class GradientMode {
  dense,   // every position, pruned ones included (needed for regrowth)
  active,  // only positions active in the mask; the rest are left at zero
};

/// Gradients of task_loss with respect to each layer's effective weight and bias.
inline Gradients backward(const Network& net, const ForwardCache& cache, const Tensor& logits,
                          std::span<const int> labels, GradientMode mode = GradientMode::dense) {
  if (cache.generation != net.generation() || cache.inputs.size() != net.size())
    throw InvalidStateError("backward: forward cache is stale; the network changed after forward");
  const std::size_t n = cache.batch;
  if (labels.size() != n)
    throw ShapeError("backward: label count differs from batch size");
  const std::size_t classes = net.num_classes();
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ShapeError("backward: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");

  // d loss / d logits = (softmax - onehot) / n
  std::vector<double> grad(n * classes);
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.data.data() + b * classes;
    double* g = grad.data() + b * classes;
    const double m = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      g[j] = std::exp(z[j] - m);
      s += g[j];
    }
    for (std::size_t j = 0; j < classes; ++j)
      g[j] = g[j] / s / static_cast<double>(n);
    g[labels[b]] -= 1.0 / static_cast<double>(n);
  }

  Gradients out(net.size());
  for (std::size_t li = net.size(); li-- > 0;) {
    const Layer& l = net.layer(li);
    const Tensor& e = cache.effective[li];
    const std::vector<double>& x = cache.inputs[li];
    if (l.activation == Activation::relu) {
      const std::vector<double>& z = cache.pre[li];
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(z[i] > 0.0))
          grad[i] = 0.0;
    }
    LayerGradient& lg = out[li];
    lg.weight = Tensor(e.shape);
    lg.bias.assign(l.bias.size(), 0.0);
    std::vector<double> dx;
    const bool need_dx = li > 0;
    if (l.kind == LayerKind::dense) {
      const std::size_t outu = e.shape[0], in = e.shape[1];
      const detail::RowSupport support(e);
      const auto& mask = l.param.mask.bits;
      const bool active_only = mode == GradientMode::active;
      if (need_dx)
        dx.assign(n * in, 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        const double* xb = x.data() + b * in;
        const double* gb = grad.data() + b * outu;
        double* dxb = need_dx ? dx.data() + b * in : nullptr;
        for (std::size_t o = 0; o < outu; ++o) {
          const double g = gb[o];
          if (g == 0.0)
            continue;
          lg.bias[o] += g;
          double* dwr = lg.weight.data.data() + o * in;
          if (active_only) {
            const std::uint8_t* mr = mask.data() + o * in;
            for (std::size_t i = 0; i < in; ++i)
              if (mr[i])
                dwr[i] += g * xb[i];
          } else {
            for (std::size_t i = 0; i < in; ++i)
              dwr[i] += g * xb[i];
          }
          if (dxb) {
            const double* wr = e.data.data() + o * in;
            if (support.sparse) {
              for (std::size_t p = support.offsets[o]; p < support.offsets[o + 1]; ++p)
                dxb[support.cols[p]] += g * wr[support.cols[p]];
            } else {
              for (std::size_t i = 0; i < in; ++i)
                dxb[i] += g * wr[i];
            }
          }
        }
      }
    } else {
      detail::conv_backward(e, grad, x, n, l.in_shape, lg.weight, lg.bias, need_dx ? &dx : nullptr);
    }
    grad = std::move(dx);
  }
  return out;
}

inline Gradients backward(const Network& net, const ForwardResult& fr, std::span<const int> labels,
                          GradientMode mode = GradientMode::dense) {
  return backward(net, fr.cache, fr.logits, labels, mode);
}

} // namespace rankprune
