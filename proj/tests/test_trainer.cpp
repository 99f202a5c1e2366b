#include "support.hpp"

#include "rankprune/trainer.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace rankprune;
using rptest::relative_error;

namespace {

const std::vector<LayerSpec> kToyMlp{parse_layer_spec("dense:128:relu"), parse_layer_spec("dense:128:relu"),
                                     parse_layer_spec("dense:10:none")};

Dataset toy_data() {
  SyntheticDatasetSpec s;
  s.num_classes = 10;
  s.features = 64;
  s.samples_per_class = 200;
  s.cluster_spread = 3.0;
  s.seed = 101;
  return make_blobs(s);
}

TrainConfig toy_config(double sparsity, double lambda) {
  TrainConfig c;
  c.schedule.final_sparsity = sparsity;
  c.schedule.prune_steps = 2000;
  c.schedule.update_interval = 100;
  c.schedule.total_steps = 3000;
  c.rank.lambda = lambda;
  return c;
}

Batch random_batch(std::mt19937_64& rng, std::size_t features, std::size_t n, std::size_t classes) {
  std::normal_distribution<double> nd;
  Batch b{Tensor({n, features}), {}};
  for (double& v : b.inputs.data)
    v = nd(rng);
  for (std::size_t i = 0; i < n; ++i)
    b.labels.push_back(static_cast<int>(rng() % classes));
  return b;
}

std::vector<std::vector<std::uint8_t>> masks_of(const Network& net) {
  std::vector<std::vector<std::uint8_t>> out;
  for (const Layer& l : net.layers())
    out.push_back(l.param.mask.bits);
  return out;
}

std::size_t total_weights(const Network& net) {
  std::size_t n = 0;
  for (const Layer& l : net.layers())
    n += l.param.weight.size();
  return n;
}

} // namespace

TEST(CombinedGradient, LambdaZeroIsTaskGradient) {
  std::mt19937_64 rng(1);
  const Network net({8}, std::vector<LayerSpec>{parse_layer_spec("dense:6:relu"), parse_layer_spec("dense:3:none")}, 4);
  const Batch b = random_batch(rng, 8, 5, 3);
  RankLossConfig cfg;
  cfg.lambda = 0.0;
  const CombinedGradient cg = combined_gradient(net, b, cfg);
  const auto ref = backward(net, forward(net, b), b.labels);
  for (std::size_t li = 0; li < net.size(); ++li) {
    EXPECT_EQ(cg.grads[li].weight, ref[li].weight);
    EXPECT_EQ(cg.grads[li].bias, ref[li].bias);
  }
  EXPECT_EQ(cg.skipped_layers, 0u);
}

TEST(CombinedGradient, ZeroHeadIsolatesRankTerm) {
  // With an all-zero output layer nothing upstream affects the task loss, so
  // hidden layers see only the rank term; the head itself is degenerate and
  // keeps its task gradient.
  std::mt19937_64 rng(2);
  Network net({8}, std::vector<LayerSpec>{parse_layer_spec("dense:6:relu"), parse_layer_spec("dense:5:relu"),
                                          parse_layer_spec("dense:3:none")},
              4);
  for (double& w : net.layer_mut(2).param.weight.data)
    w = 0.0;
  const Batch b = random_batch(rng, 8, 5, 3);
  RankLossConfig cfg;
  cfg.lambda = 0.3;
  const CombinedGradient cg = combined_gradient(net, b, cfg);
  EXPECT_EQ(cg.skipped_layers, 1u);
  for (std::size_t li = 0; li < 2; ++li) {
    const Matrix w = reshape_to_matrix(net.layer(li));
    const std::size_t k = select_k(svd(normalize(w)).sigma, cfg.target_error);
    const Matrix rg = rank_loss_gradient(w, k);
    for (std::size_t i = 0; i < w.size(); ++i)
      EXPECT_NEAR(cg.grads[li].weight[i], cfg.lambda * rg.values()[i], 1e-15);
  }
  const auto ref = backward(net, forward(net, b), b.labels);
  EXPECT_EQ(cg.grads[2].weight, ref[2].weight);
}

TEST(CombinedGradient, FiniteDifferencesOfCombinedObjective) {
  std::mt19937_64 rng(3);
  Network net({6}, std::vector<LayerSpec>{parse_layer_spec("dense:7:relu"), parse_layer_spec("dense:4:none")}, 11);
  std::uniform_real_distribution<double> u;
  for (std::size_t li = 0; li < net.size(); ++li) {
    Layer& l = net.layer_mut(li);
    for (std::size_t i = 1; i < l.param.mask.size(); ++i)
      if (u(rng) < 0.3) {
        l.param.mask.bits[i] = 0;
        l.param.weight[i] = 0.0;
      }
  }
  const Batch b = random_batch(rng, 6, 8, 4);
  RankLossConfig cfg;
  cfg.lambda = 0.1;
  const CombinedGradient cg = combined_gradient(net, b, cfg);
  ASSERT_EQ(cg.skipped_layers, 0u);

  std::vector<std::size_t> ks;
  for (const Layer& l : net.layers())
    ks.push_back(select_k(svd(normalize(reshape_to_matrix(l))).sigma, cfg.target_error));
  // Dense twin whose stored weights are the effective ones: perturbing a
  // pruned coordinate there is perturbing the effective weight.
  Network twin = net;
  for (std::size_t li = 0; li < twin.size(); ++li) {
    Layer& l = twin.layer_mut(li);
    l.param.mask = Mask(l.param.weight.shape);
  }
  auto objective = [&] {
    double v = task_loss(forward(twin, b).logits, b.labels);
    for (std::size_t li = 0; li < twin.size(); ++li)
      v += cfg.lambda * rank_loss(reshape_to_matrix(twin.layer(li)), ks[li]);
    return v;
  };
  const double h = 1e-6;
  for (std::size_t li = 0; li < twin.size(); ++li)
    for (std::size_t i = 0; i < twin.layer(li).param.weight.size(); ++i) {
      double& w = twin.layer_mut(li).param.weight[i];
      const double w0 = w;
      w = w0 + h;
      const double lp = objective();
      w = w0 - h;
      const double lm = objective();
      w = w0;
      ASSERT_LE(relative_error(cg.grads[li].weight[i], (lp - lm) / (2 * h)), 1e-4) << "layer " << li << " entry " << i;
    }
}

TEST(SgdStep, ZeroGradientIsFixedPoint) {
  Network net({4}, std::vector<LayerSpec>{parse_layer_spec("dense:3:none")}, 1);
  const Network before = net;
  OptimizerState opt(net);
  Gradients g{LayerGradient{Tensor({3, 4}), std::vector<double>(3, 0.0)}};
  sgd_step(net, g, opt, 0.1, 0.9, 0.0);
  EXPECT_EQ(net.layer(0).param.weight, before.layer(0).param.weight);
  EXPECT_EQ(net.layer(0).bias, before.layer(0).bias);
}

TEST(SgdStep, PlainStepFormula) {
  Network net({2}, std::vector<LayerSpec>{parse_layer_spec("dense:2:none")}, 1);
  Layer& l = net.layer_mut(0);
  l.param.weight = Tensor({2, 2}, {1.0, -2.0, 0.0, 0.5});
  l.param.mask.bits = {1, 1, 0, 1};
  l.bias = {0.25, -0.5};
  OptimizerState opt(net);
  Gradients g{LayerGradient{Tensor({2, 2}, {0.5, 0.5, 7.0, -1.0}), {1.0, 2.0}}};
  const double lr = 0.1, wd = 0.01;
  sgd_step(net, g, opt, lr, 0.0, wd);
  const auto& w = net.layer(0).param.weight;
  EXPECT_DOUBLE_EQ(w[0], 1.0 - lr * (0.5 + wd * 1.0));
  EXPECT_DOUBLE_EQ(w[1], -2.0 - lr * (0.5 + wd * -2.0));
  EXPECT_EQ(w[2], 0.0);
  EXPECT_DOUBLE_EQ(w[3], 0.5 - lr * (-1.0 + wd * 0.5));
  EXPECT_DOUBLE_EQ(net.layer(0).bias[0], 0.25 - lr * 1.0);
  EXPECT_DOUBLE_EQ(net.layer(0).bias[1], -0.5 - lr * 2.0);
  EXPECT_EQ(opt.weight[0][2], 0.0);
}

TEST(SgdStep, TwoStepMomentumUnroll) {
  Network net({1}, std::vector<LayerSpec>{parse_layer_spec("dense:1:none")}, 1);
  net.layer_mut(0).param.weight = Tensor({1, 1}, {2.0});
  net.layer_mut(0).bias = {0.0};
  OptimizerState opt(net);
  const double lr = 0.1, mu = 0.9, wd = 0.01, g1 = 0.5, g2 = -0.25;
  sgd_step(net, Gradients{LayerGradient{Tensor({1, 1}, {g1}), {g1}}}, opt, lr, mu, wd);
  sgd_step(net, Gradients{LayerGradient{Tensor({1, 1}, {g2}), {g2}}}, opt, lr, mu, wd);
  const double b1 = g1 + wd * 2.0;
  const double w1 = 2.0 - lr * b1;
  const double b2 = mu * b1 + g2 + wd * w1;
  const double w2 = w1 - lr * b2;
  EXPECT_DOUBLE_EQ(net.layer(0).param.weight[0], w2);
  EXPECT_DOUBLE_EQ(net.layer(0).bias[0], -lr * g1 - lr * (mu * g1 + g2));
}

TEST(Train, ZeroSparsityIsDenseTraining) {
  const Dataset d = toy_data();
  TrainConfig c = toy_config(0.0, 0.1);
  c.schedule.prune_steps = 200;
  c.schedule.total_steps = 300;
  Trainer t(c, Network({64}, kToyMlp, 1), d);
  t.run();
  EXPECT_TRUE(t.mask_updates().empty());
  for (const Layer& l : t.network().layers())
    for (auto bit : l.param.mask.bits)
      ASSERT_EQ(bit, 1);
  for (const MetricsRecord& r : t.metrics())
    EXPECT_EQ(r.sparsity, 0.0);
  EXPECT_EQ(t.rank_skips(), 0u);
}

TEST(Train, ToyRunScheduleAndStageTwoMasks) {
  const Dataset d = toy_data();
  const TrainConfig c = toy_config(0.99, 0.1);
  Trainer t(c, Network({64}, kToyMlp, 1), d);
  t.run_until(c.schedule.prune_steps);
  const auto frozen = masks_of(t.network());
  const double slack = static_cast<double>(t.network().size()) / static_cast<double>(total_weights(t.network()));

  ASSERT_EQ(t.mask_updates().size(), c.schedule.prune_steps / c.schedule.update_interval);
  double prev = 0.0;
  for (const MetricsRecord& r : t.metrics()) {
    EXPECT_GE(r.sparsity, prev) << "step " << r.step;
    prev = r.sparsity;
    if (t.is_mask_update_step(r.step))
      EXPECT_NEAR(r.sparsity, target_sparsity(c.schedule, r.step), slack) << "step " << r.step;
  }

  while (!t.done()) {
    t.step();
    ASSERT_EQ(masks_of(t.network()), frozen) << "mask changed at step " << t.state().step;
  }
  EXPECT_NEAR(t.network().sparsity(), 0.99, slack);
  EXPECT_EQ(t.metrics().back().step, 3000u);
  EXPECT_TRUE(t.metrics().back().eval_accuracy.has_value());
}

TEST(Train, DeterministicMetrics) {
  const Dataset d = toy_data();
  TrainConfig c = toy_config(0.9, 0.1);
  c.schedule.prune_steps = 400;
  c.schedule.total_steps = 600;
  const TrainResult a = train(c, Network({64}, kToyMlp, 5), d);
  const TrainResult b = train(c, Network({64}, kToyMlp, 5), d);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(a.metrics[i].task_loss, b.metrics[i].task_loss);
    EXPECT_EQ(a.metrics[i].rank_loss, b.metrics[i].rank_loss);
    EXPECT_EQ(a.metrics[i].avg_delta_rank, b.metrics[i].avg_delta_rank);
    EXPECT_EQ(a.metrics[i].sparsity, b.metrics[i].sparsity);
  }
  for (std::size_t li = 0; li < a.net.size(); ++li)
    EXPECT_EQ(a.net.layer(li).param.weight, b.net.layer(li).param.weight);
}

TEST(Train, MomentumHygiene) {
  const Dataset d = toy_data();
  TrainConfig c = toy_config(0.95, 0.1);
  c.schedule.prune_steps = 500;
  c.schedule.total_steps = 500;
  Trainer t(c, Network({64}, kToyMlp, 2), d);
  std::size_t checked = 0;
  while (!t.done()) {
    const std::size_t step = t.state().step + 1;
    const bool update = t.is_mask_update_step(step);
    t.step();
    const TrainerState& s = t.state();
    for (std::size_t li = 0; li < s.net.size(); ++li) {
      const Layer& l = s.net.layer(li);
      for (std::size_t i = 0; i < l.param.mask.size(); ++i)
        if (!l.param.mask.bits[i]) {
          ASSERT_EQ(l.param.weight[i], 0.0);
          ASSERT_EQ(s.opt.weight[li][i], 0.0);
        }
      if (!update)
        continue;
      // A freshly grown position starts at zero weight and zero momentum, so
      // after its first step the weight is exactly -lr times the buffer.
      for (std::size_t i : t.mask_updates().back().layers[li].reset)
        if (l.param.mask.bits[i]) {
          ASSERT_EQ(l.param.weight[i], -c.learning_rate * s.opt.weight[li][i]);
          ++checked;
        }
    }
  }
  EXPECT_GT(checked, 0u);
}

TEST(Train, RejectsInconsistentSchedule) {
  const Dataset d = toy_data();
  TrainConfig c = toy_config(0.9, 0.1);
  c.schedule.prune_steps = 250;
  EXPECT_THROW(Trainer(c, Network({64}, kToyMlp, 1), d), DomainError);
  c = toy_config(0.9, 0.1);
  c.schedule.total_steps = 1000;
  EXPECT_THROW(Trainer(c, Network({64}, kToyMlp, 1), d), DomainError);
  c = toy_config(0.9, 0.1);
  EXPECT_THROW(Trainer(c, Network({32}, kToyMlp, 1), d), ShapeError);
}

TEST(AverageDeltaRank, InitialisedNetMatchesOracle) {
  const Network net({64}, kToyMlp, 9);
  double sum = 0.0;
  for (const Layer& l : net.layers()) {
    const SvdFactors f = svd(normalize(reshape_to_matrix(l)));
    std::size_t k = 1;
    while (k < f.sigma.size() && low_rank_error(f, k) >= 0.1)
      ++k;
    sum += static_cast<double>(k);
  }
  EXPECT_DOUBLE_EQ(average_delta_rank(net, 0.1), sum / 3.0);
}

TEST(AverageDeltaRank, RankOneAndZero) {
  Network net({3}, std::vector<LayerSpec>{parse_layer_spec("dense:4:relu"), parse_layer_spec("dense:2:none")}, 1);
  net.layer_mut(0).param.weight = Tensor({4, 3}, {1, 2, 3, 2, 4, 6, -1, -2, -3, 0, 0, 0});
  net.layer_mut(1).param.weight = Tensor({2, 4}, {1, 1, 1, 1, 3, 3, 3, 3});
  EXPECT_EQ(average_delta_rank(net, 0.1), 1.0);
  for (std::size_t li = 0; li < 2; ++li)
    for (double& w : net.layer_mut(li).param.weight.data)
      w = 0.0;
  EXPECT_EQ(average_delta_rank(net, 0.1), 0.0);
  EXPECT_THROW((void)average_delta_rank(net, 0.0), DomainError);
}
