#pragma once

// Two-stage training: gradual prune-and-grow under the combined objective,
// then fixed-mask finetuning.

#include "rankprune/data.hpp"
#include "rankprune/errors.hpp"
#include "rankprune/linalg.hpp"
#include "rankprune/model.hpp"
#include "rankprune/rank.hpp"
#include "rankprune/sparsity.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rankprune {

struct TrainConfig {
  SparsitySchedule schedule;
  GrowSchedule grow;
  RankLossConfig rank;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  bool cosine_lr = false;
  std::size_t log_interval = 100;  // metrics row every N steps (plus mask updates and the last step)
  std::size_t eval_interval = 0;   // 0: evaluate on the held-out set only at the last step

  void validate() const {
    schedule.validate();
    grow.validate();
    rank.validate();
    if (schedule.prune_steps % schedule.update_interval != 0)
      throw DomainError("prune_steps (" + std::to_string(schedule.prune_steps) +
                        ") must be a multiple of update_interval (" + std::to_string(schedule.update_interval) +
                        ") so the last mask update lands on the final sparsity");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw DomainError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw DomainError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0))
      throw DomainError("weight_decay must be >= 0");
    if (batch_size == 0)
      throw DomainError("batch_size must be positive");
    if (log_interval == 0)
      throw DomainError("log_interval must be positive");
  }
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Momentum buffers, one per weight and bias tensor.
struct OptimizerState {
  std::vector<Tensor> weight;
  std::vector<std::vector<double>> bias;

  OptimizerState() = default;
  explicit OptimizerState(const Network& net) {
    for (const Layer& l : net.layers()) {
      weight.emplace_back(l.param.weight.shape);
      bias.emplace_back(l.bias.size(), 0.0);
    }
  }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct MetricsRecord {
  std::size_t step = 0;
  double sparsity = 0.0;
  double task_loss = 0.0;
  double rank_loss = 0.0;  // sum over layers at each layer's selected k
  double avg_delta_rank = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct LayerRankStats {
  std::size_t delta_rank = 0;
  std::optional<double> rank_loss;  // empty when the layer is degenerate or has r = 1
  std::size_t k = 0;
  std::vector<double> spectrum;     // normalized singular values
};

/// Spectrum-derived statistics of one (effective) weight matrix.
inline LayerRankStats layer_rank_stats(const Matrix& w, const RankLossConfig& cfg, double delta) {
  LayerRankStats s;
  if (!(frobenius_norm(w) > cfg.norm_floor))
    return s;
  const SvdFactors f = svd(normalize(w, cfg.norm_floor));
  s.spectrum = f.sigma;
  s.delta_rank = delta_rank_from_spectrum(f.sigma, delta);
  if (f.sigma.size() > 1) {
    s.k = select_k(f.sigma, cfg.target_error);
    s.rank_loss = -tail_energy(f.sigma, s.k);
  }
  return s;
}

/// Mean delta-rank of the effective weight matrices of all prunable layers.
inline double average_delta_rank(const Network& net, double delta, double norm_floor = kDefaultNormFloor) {
  if (!(delta > 0.0))
    throw DomainError("average_delta_rank: delta must be > 0");
  double sum = 0.0;
  for (const Layer& l : net.layers())
    sum += static_cast<double>(delta_rank(reshape_to_matrix(l), delta, norm_floor));
  return sum / static_cast<double>(net.size());
}

struct CombinedGradient {
  Gradients grads;
  double task_loss = 0.0;
  double train_accuracy = 0.0;
  double rank_loss = 0.0;         // sum of the layer terms that contributed
  std::size_t skipped_layers = 0; // degenerate weight/spectrum or r = 1
};

/// Gradient of L_task + lambda * sum_layers L_rank with respect to each
/// effective weight, defined at every position. Each layer's truncation rank
/// comes from select_k on its own normalized spectrum.
inline CombinedGradient combined_gradient(const Network& net, const Batch& batch, const RankLossConfig& cfg,
                                          const std::function<void(const std::string&)>& log = {}) {
  CombinedGradient out;
  const ForwardResult fr = forward(net, batch);
  out.grads = backward(net, fr, batch.labels);
  out.task_loss = task_loss(fr.logits, batch.labels);
  out.train_accuracy = accuracy(fr.logits, batch.labels);
  if (cfg.lambda == 0.0)
    return out;
  for (std::size_t li = 0; li < net.size(); ++li) {
    const Matrix e = reshape_to_matrix(net.layer(li));
    try {
      const SvdFactors f = svd(normalize(e, cfg.norm_floor));
      if (f.sigma.size() < 2) {
        ++out.skipped_layers;
        continue;
      }
      const std::size_t k = select_k(f.sigma, cfg.target_error);
      const Matrix g = rank_loss_gradient(e, f, k);
      out.rank_loss += -tail_energy(f.sigma, k);
      auto& dst = out.grads[li].weight.data;
      for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] += cfg.lambda * g.values()[i];
    } catch (const DegenerateWeightError& e) {
      ++out.skipped_layers;
      if (log)
        log("layer " + std::to_string(li) + ": rank term skipped (" + e.what() + ")");
    } catch (const DegenerateSpectrumError& e) {
      ++out.skipped_layers;
      if (log)
        log("layer " + std::to_string(li) + ": rank term skipped (" + e.what() + ")");
    }
  }
  return out;
}

/// Momentum SGD with decoupled-from-bias weight decay. Only active weight
/// positions move; pruned positions are held at zero together with their
/// momentum. Biases are never decayed.
inline void sgd_step(Network& net, const Gradients& grads, OptimizerState& opt, double lr, double momentum,
                     double weight_decay) {
  if (grads.size() != net.size() || opt.weight.size() != net.size())
    throw ShapeError("sgd_step: gradient/optimizer layer counts differ from the network");
  for (std::size_t li = 0; li < net.size(); ++li) {
    Layer& l = net.layer_mut(li);
    auto& w = l.param.weight.data;
    const auto& m = l.param.mask.bits;
    const auto& g = grads[li].weight.data;
    auto& buf = opt.weight[li].data;
    if (g.size() != w.size() || buf.size() != w.size())
      throw ShapeError("sgd_step: weight gradient shape mismatch in layer " + std::to_string(li));
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!m[i]) {
        w[i] = 0.0;
        buf[i] = 0.0;
        continue;
      }
      buf[i] = momentum * buf[i] + g[i] + weight_decay * w[i];
      w[i] -= lr * buf[i];
    }
    auto& bb = opt.bias[li];
    for (std::size_t i = 0; i < l.bias.size(); ++i) {
      bb[i] = momentum * bb[i] + grads[li].bias[i];
      l.bias[i] -= lr * bb[i];
    }
  }
}

inline void sgd_step(Network& net, const Gradients& grads, OptimizerState& opt, const TrainConfig& cfg) {
  sgd_step(net, grads, opt, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
}

/// Everything needed to continue a run bit-for-bit.
struct TrainerState {
  Network net;
  OptimizerState opt;
  std::size_t step = 0;  // completed steps
  std::vector<MetricsRecord> metrics;
  std::size_t rank_skips = 0;
};

class Trainer {
public:
  using Logger = std::function<void(const std::string&)>;

  Trainer(TrainConfig cfg, Network net, const Dataset& train, const Dataset* eval = nullptr)
      : cfg_(std::move(cfg)), train_(train), eval_(eval) {
    cfg_.validate();
    if (train_.size() == 0)
      throw DomainError("Trainer: training set is empty");
    if (train_.features() != shape_size(net.input_shape()))
      throw ShapeError("Trainer: dataset samples have " + std::to_string(train_.features()) +
                       " features, the network expects " + shape_string(net.input_shape()));
    state_.opt = OptimizerState(net);
    state_.net = std::move(net);
  }

  void set_logger(Logger log) { log_ = std::move(log); }

  /// Replaces network, optimizer, step counter and metrics history (checkpoint resume).
  void restore(TrainerState s) {
    if (s.step > cfg_.schedule.total_steps)
      throw ScheduleError("restore: checkpoint step exceeds total_steps");
    state_ = std::move(s);
  }

  [[nodiscard]] const TrainerState& state() const noexcept { return state_; }
  [[nodiscard]] const Network& network() const noexcept { return state_.net; }
  [[nodiscard]] const TrainConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const std::vector<MetricsRecord>& metrics() const noexcept { return state_.metrics; }
  [[nodiscard]] const std::vector<MaskUpdateReport>& mask_updates() const noexcept { return updates_; }
  [[nodiscard]] std::size_t rank_skips() const noexcept { return state_.rank_skips; }
  [[nodiscard]] bool done() const noexcept { return state_.step >= cfg_.schedule.total_steps; }

  [[nodiscard]] bool is_mask_update_step(std::size_t t) const noexcept {
    const auto& s = cfg_.schedule;
    return s.final_sparsity > 0.0 && t <= s.prune_steps && t % s.update_interval == 0;
  }

  void run() { run_until(cfg_.schedule.total_steps); }

  void run_until(std::size_t last) {
    last = std::min(last, cfg_.schedule.total_steps);
    while (state_.step < last)
      step();
  }

  /// One optimization step (t = state().step + 1).
  void step() {
    const std::size_t t = state_.step + 1;
    const Batch batch = sample_batch(t);
    const double lr = learning_rate(t);
    Network& net = state_.net;

    double loss = 0.0, acc = 0.0;
    if (is_mask_update_step(t)) {
      CombinedGradient cg = combined_gradient(net, batch, cfg_.rank, log_);
      state_.rank_skips += cg.skipped_layers;
      loss = cg.task_loss;
      acc = cg.train_accuracy;
      std::vector<Tensor> dense;
      dense.reserve(cg.grads.size());
      for (const auto& g : cg.grads)
        dense.push_back(g.weight);
      updates_.push_back(update_masks(net.masked_tensors(), dense, cfg_.schedule, cfg_.grow, t));
      for (std::size_t li = 0; li < net.size(); ++li)
        for (std::size_t i : updates_.back().layers[li].reset)
          state_.opt.weight[li].data[i] = 0.0;
      sgd_step(net, cg.grads, state_.opt, lr, cfg_.momentum, cfg_.weight_decay);
    } else {
      const ForwardResult fr = forward(net, batch);
      const Gradients g = backward(net, fr, batch.labels, GradientMode::active);
      loss = task_loss(fr.logits, batch.labels);
      acc = accuracy(fr.logits, batch.labels);
      sgd_step(net, g, state_.opt, lr, cfg_.momentum, cfg_.weight_decay);
    }
    state_.step = t;

    const bool last = t == cfg_.schedule.total_steps;
    if (t % cfg_.log_interval == 0 || is_mask_update_step(t) || last)
      state_.metrics.push_back(record(t, loss, acc, last || (cfg_.eval_interval && t % cfg_.eval_interval == 0)));
  }

  [[nodiscard]] double evaluate() const {
    if (!eval_ || eval_->size() == 0)
      return accuracy_on(train_);
    return accuracy_on(*eval_);
  }

private:
  [[nodiscard]] double learning_rate(std::size_t t) const {
    if (!cfg_.cosine_lr)
      return cfg_.learning_rate;
    const double x = static_cast<double>(t - 1) / static_cast<double>(cfg_.schedule.total_steps);
    return 0.5 * cfg_.learning_rate * (1.0 + std::cos(std::numbers::pi * x));
  }

  // Batch indices depend only on (seed, t), so a resumed run draws the same batches.
  [[nodiscard]] Batch sample_batch(std::size_t t) const {
    std::mt19937_64 rng(cfg_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(t));
    std::vector<std::size_t> idx(cfg_.batch_size);
    for (auto& i : idx)
      i = static_cast<std::size_t>(rng() % train_.size());
    return train_.gather(idx);
  }

  [[nodiscard]] double accuracy_on(const Dataset& d) const {
    std::size_t hits = 0;
    for (const Batch& b : d.batches(1024)) {
      const ForwardResult fr = forward(state_.net, b);
      hits += static_cast<std::size_t>(std::llround(accuracy(fr.logits, b.labels) * static_cast<double>(b.size())));
    }
    return static_cast<double>(hits) / static_cast<double>(d.size());
  }

  [[nodiscard]] MetricsRecord record(std::size_t t, double loss, double acc, bool with_eval) const {
    MetricsRecord r;
    r.step = t;
    r.sparsity = state_.net.sparsity();
    r.task_loss = loss;
    r.train_accuracy = acc;
    double rank_sum = 0.0;
    double dr_sum = 0.0;
    for (const Layer& l : state_.net.layers()) {
      const LayerRankStats s = layer_rank_stats(reshape_to_matrix(l), cfg_.rank, cfg_.rank.delta_rank_tolerance);
      dr_sum += static_cast<double>(s.delta_rank);
      if (s.rank_loss)
        rank_sum += *s.rank_loss;
    }
    r.rank_loss = rank_sum;
    r.avg_delta_rank = dr_sum / static_cast<double>(state_.net.size());
    if (with_eval)
      r.eval_accuracy = evaluate();
    return r;
  }

  TrainConfig cfg_;
  const Dataset& train_;
  const Dataset* eval_ = nullptr;
  TrainerState state_;
  std::vector<MaskUpdateReport> updates_;
  Logger log_;
};

struct TrainResult {
  Network net;
  std::vector<MetricsRecord> metrics;
  std::size_t rank_skips = 0;
};

inline TrainResult train(const TrainConfig& cfg, Network net, const Dataset& train_set,
                         const Dataset* eval_set = nullptr) {
  Trainer t(cfg, std::move(net), train_set, eval_set);
  t.run();
  return {t.network(), t.metrics(), t.rank_skips()};
}

} // namespace rankprune
