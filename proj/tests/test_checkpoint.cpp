#include "rankprune/checkpoint.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace rankprune;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.data.synthetic.samples_per_class = 40;
  c.data.eval_samples_per_class = 10;
  c.train.schedule.final_sparsity = 0.95;
  c.train.schedule.prune_steps = 300;
  c.train.schedule.total_steps = 450;
  c.train.log_interval = 50;
  c.train.eval_interval = 150;
  c.train.rank.lambda = 0.1;
  return c;
}

void put_le64(std::vector<unsigned char>& b, std::size_t off, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    b[off + static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
}

void reseal(std::vector<unsigned char>& b) {
  const std::size_t body = b.size() - 8;
  put_le64(b, body, detail::fnv1a_bytes(b.data(), body));
}

void expect_same_state(const TrainerState& a, const TrainerState& b) {
  ASSERT_EQ(a.step, b.step);
  ASSERT_EQ(a.net.size(), b.net.size());
  for (std::size_t i = 0; i < a.net.size(); ++i) {
    EXPECT_EQ(a.net.layer(i).param.weight.data, b.net.layer(i).param.weight.data);
    EXPECT_EQ(a.net.layer(i).param.mask.bits, b.net.layer(i).param.mask.bits);
    EXPECT_EQ(a.net.layer(i).bias, b.net.layer(i).bias);
    EXPECT_EQ(a.opt.weight[i].data, b.opt.weight[i].data);
    EXPECT_EQ(a.opt.bias[i], b.opt.bias[i]);
  }
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    const auto &x = a.metrics[i], &y = b.metrics[i];
    EXPECT_EQ(x.step, y.step);
    EXPECT_EQ(x.sparsity, y.sparsity);
    EXPECT_EQ(x.task_loss, y.task_loss);
    EXPECT_EQ(x.rank_loss, y.rank_loss);
    EXPECT_EQ(x.avg_delta_rank, y.avg_delta_rank);
    EXPECT_EQ(x.train_accuracy, y.train_accuracy);
    EXPECT_EQ(x.eval_accuracy, y.eval_accuracy);
  }
  EXPECT_EQ(a.rank_skips, b.rank_skips);
}

} // namespace

TEST(Checkpoint, EncodeDecodeIsBitwise) {
  const ExperimentConfig c = small_config();
  const auto [train, eval] = load_datasets(c);
  Trainer t(c.train, build_network(c), train, &eval);
  t.run_until(200);
  const auto bytes = encode_checkpoint(c, t.state());
  const Checkpoint ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.config, c);
  EXPECT_EQ(ck.config_hash, config_hash(c));
  EXPECT_EQ(ck.version, kCheckpointVersion);
  expect_same_state(ck.state, t.state());
  EXPECT_EQ(encode_checkpoint(ck.config, ck.state), bytes);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const ExperimentConfig c = small_config();
  const auto [train, eval] = load_datasets(c);

  Trainer full(c.train, build_network(c), train, &eval);
  full.run();

  for (std::size_t stop : {std::size_t{1}, std::size_t{150}, std::size_t{299}, std::size_t{300}, std::size_t{420}}) {
    Trainer first(c.train, build_network(c), train, &eval);
    first.run_until(stop);
    const Checkpoint ck = decode_checkpoint(encode_checkpoint(c, first.state()));
    Trainer second(ck.config.train, build_network(ck.config), train, &eval);
    second.restore(ck.state);
    second.run();
    SCOPED_TRACE("resumed at " + std::to_string(stop));
    expect_same_state(second.state(), full.state());
    EXPECT_EQ(encode_checkpoint(c, second.state()), encode_checkpoint(c, full.state()));
  }
}

TEST(Checkpoint, VersionMismatchIsExplicit) {
  const ExperimentConfig c = small_config();
  const TrainerState s{build_network(c), OptimizerState(build_network(c)), 0, {}, 0};
  auto bytes = encode_checkpoint(c, s);
  bytes[8] = 2;  // version field follows the 8-byte magic
  reseal(bytes);
  try {
    (void)decode_checkpoint(bytes);
    FAIL() << "expected a version error";
  } catch (const CheckpointVersionError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  const ExperimentConfig c = small_config();
  const TrainerState s{build_network(c), OptimizerState(build_network(c)), 0, {}, 0};
  const auto good = encode_checkpoint(c, s);

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x10;
  EXPECT_THROW((void)decode_checkpoint(flipped), FormatError);

  auto truncated = good;
  truncated.resize(good.size() - 100);
  EXPECT_THROW((void)decode_checkpoint(truncated), FormatError);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW((void)decode_checkpoint(magic), FormatError);

  EXPECT_THROW((void)decode_checkpoint({}), FormatError);

  // Internally inconsistent but correctly sealed: config hash no longer matches.
  auto rehashed = good;
  put_le64(rehashed, 20, 12345);
  reseal(rehashed);
  EXPECT_THROW((void)decode_checkpoint(rehashed), FormatError);
}

TEST(Checkpoint, SaveAndLoadFile) {
  const auto dir = std::filesystem::temp_directory_path() / "rankprune_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "c.bin").string();
  const ExperimentConfig c = small_config();
  const TrainerState s{build_network(c), OptimizerState(build_network(c)), 0, {}, 0};
  save_checkpoint(path, c, s);
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  const Checkpoint ck = load_checkpoint(path);
  expect_same_state(ck.state, s);
  EXPECT_THROW((void)load_checkpoint((dir / "missing.bin").string()), IoError);
  std::filesystem::remove_all(dir);
}
