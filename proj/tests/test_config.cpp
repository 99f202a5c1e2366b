#include "rankprune/config.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace rankprune;

namespace {

ExperimentConfig random_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u;
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng() % (hi - lo + 1)); };
  // Awkward doubles: long expansions, tiny and huge magnitudes.
  auto odd_unit = [&] { return std::nextafter(u(rng), 1.0) * (1.0 - 1e-12) + 1e-13; };

  ExperimentConfig c;
  if (rng() % 3 == 0) {
    c.data.source = DataSource::idx;
    c.input = {1, pick(2, 28), pick(2, 28)};
    c.layers = {parse_layer_spec("conv:" + std::to_string(pick(1, 8)) + ":3:relu"), parse_layer_spec("dense:10:none")};
    c.data.train_images = "data/train \"images\"\\idx";
    c.data.train_labels = "labels\tfile";
    if (rng() % 2)
      c.data.eval_images = "eéval";
  } else {
    c.data.synthetic.features = pick(1, 100);
    c.input = {c.data.synthetic.features};
    c.layers.clear();
    for (std::size_t i = 0, n = pick(1, 4); i < n; ++i)
      c.layers.push_back(parse_layer_spec("dense:" + std::to_string(pick(1, 300)) + (rng() % 2 ? ":relu" : ":none")));
  }
  c.data.synthetic.num_classes = pick(2, 20);
  c.data.synthetic.samples_per_class = pick(1, 1000);
  c.data.synthetic.cluster_spread = u(rng) * 10.0 + 1e-9;
  c.data.synthetic.seed = rng();
  c.data.eval_samples_per_class = pick(0, 50);

  auto& t = c.train;
  t.schedule.final_sparsity = rng() % 5 == 0 ? 0.0 : odd_unit() * 0.999;
  t.schedule.update_interval = pick(1, 200);
  t.schedule.prune_steps = t.schedule.update_interval * pick(1, 30);
  t.schedule.total_steps = t.schedule.prune_steps + pick(0, 5000);
  t.schedule.kind = rng() % 2 ? ScheduleKind::cubic : ScheduleKind::linear;
  t.grow.alpha0 = odd_unit();
  t.learning_rate = std::exp(-10.0 * u(rng)) + 1e-300;
  t.momentum = odd_unit() * 0.99;
  t.weight_decay = rng() % 4 == 0 ? 0.0 : 1e-7 * u(rng);
  t.batch_size = pick(1, 512);
  t.seed = rng();
  t.cosine_lr = rng() % 2;
  t.log_interval = pick(1, 1000);
  t.eval_interval = pick(0, 1000);
  t.rank.lambda = rng() % 4 == 0 ? 0.0 : std::exp(8.0 * u(rng) - 6.0);
  t.rank.target_error = odd_unit();
  t.rank.delta_rank_tolerance = odd_unit();
  t.rank.norm_floor = std::exp(-60.0 * u(rng));
  c.report.metrics = "out/m#1.csv";
  c.report.summary = "";
  return c;
}

std::size_t error_line(const std::string& text) {
  try {
    (void)parse_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  ADD_FAILURE() << "no ConfigError for:\n" << text;
  return 0;
}

std::string error_message(const std::string& text) {
  try {
    (void)parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

} // namespace

TEST(Config, DefaultRoundTrip) {
  const ExperimentConfig c;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
  EXPECT_EQ(parse_config(""), c);
}

TEST(Config, RandomRoundTrip) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 300; ++i) {
    const ExperimentConfig c = random_config(rng);
    const std::string text = serialize_config(c);
    const ExperimentConfig back = parse_config(text);
    ASSERT_EQ(back, c) << text;
    ASSERT_EQ(serialize_config(back), text);
    ASSERT_EQ(config_hash(back), config_hash(c));
  }
}

TEST(Config, HandWrittenFileWithCommentsAndDefaults) {
  const ExperimentConfig c = parse_config(R"(# experiment
[schedule]
final_sparsity = 0.95   # trailing comment
kind = "linear"

[rank]
lambda = 1
delta = 5e-2
[train]
cosine_lr = true
)");
  EXPECT_EQ(c.train.schedule.final_sparsity, 0.95);
  EXPECT_EQ(c.train.schedule.kind, ScheduleKind::linear);
  EXPECT_EQ(c.train.rank.lambda, 1.0);
  EXPECT_EQ(c.train.rank.delta_rank_tolerance, 0.05);
  EXPECT_TRUE(c.train.cosine_lr);
  EXPECT_EQ(c.train.batch_size, ExperimentConfig{}.train.batch_size);
}

TEST(Config, HashSeparatesConfigs) {
  ExperimentConfig a, b;
  b.train.rank.lambda = 0.1000000001;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a), config_hash(ExperimentConfig{}));
}

TEST(Config, RangeErrorNamesFieldAndLine) {
  const std::string text = "[schedule]\nfinal_sparsity = 1.5\n";
  EXPECT_EQ(error_line(text), 2u);
  const std::string msg = error_message(text);
  EXPECT_NE(msg.find("schedule.final_sparsity"), std::string::npos) << msg;
  EXPECT_NE(msg.find("1.5"), std::string::npos) << msg;
}

TEST(Config, LineAnchoredErrors) {
  EXPECT_EQ(error_line("[train]\nlearning_rate = 0.1\nmomentum = \"fast\"\n"), 3u);
  EXPECT_EQ(error_line("[train]\n\nbatch_size = 2.5\n"), 3u);
  EXPECT_EQ(error_line("[train]\nbatch_size = -4\n"), 2u);
  EXPECT_EQ(error_line("[rank]\nlambda = \n"), 2u);
  EXPECT_EQ(error_line("[report]\nmetrics = \"open\n"), 2u);
  EXPECT_EQ(error_line("[report\n"), 1u);
  EXPECT_EQ(error_line("lambda = 0.1\n"), 1u);
  EXPECT_EQ(error_line("[model]\nlayers = [\"dense:4:relu\", \"pool:2\"]\n"), 2u);
  EXPECT_EQ(error_line("[model]\ninput = [3, 8, 8]\n"), 2u);
  EXPECT_EQ(error_line("[schedule]\nprune_steps = 250\n"), 2u);
  EXPECT_EQ(error_line("# c\n[schedule]\ntotal_steps = 10\n"), 3u);
  EXPECT_EQ(error_line("[data]\nsource = \"idx\"\n"), 2u);
}

TEST(Config, UnknownKeyRejected) {
  const std::string text = "[train]\nlearning_rate = 0.1\nlearnig_rate = 0.2\n";
  EXPECT_EQ(error_line(text), 3u);
  EXPECT_NE(error_message(text).find("train.learnig_rate"), std::string::npos);
  EXPECT_EQ(error_line("[bogus]\nx = 1\n"), 2u);
}

TEST(Config, DuplicateKeyRejected) {
  const std::string text = "[rank]\nlambda = 0.1\n\n[rank]\nlambda = 0.2\n";
  EXPECT_EQ(error_line(text), 5u);
  EXPECT_NE(error_message(text).find("line 2"), std::string::npos) << error_message(text);
}

TEST(Config, LoadMissingFile) { EXPECT_THROW(load_config("/nonexistent/dir/x.toml"), IoError); }

TEST(Config, BuildsMatchingDatasetsAndNetwork) {
  ExperimentConfig c;
  c.data.synthetic.samples_per_class = 7;
  c.data.eval_samples_per_class = 3;
  const auto [train, eval] = load_datasets(c);
  EXPECT_EQ(train.size(), 70u);
  EXPECT_EQ(eval.size(), 30u);
  const Network net = build_network(c);
  EXPECT_EQ(net.input_shape(), c.input);
  EXPECT_EQ(net.num_classes(), 10u);
}
