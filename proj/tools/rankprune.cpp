// rankprune: train, sweep, analyze and plot rank-preserving sparse training runs.

#include "rankprune/checkpoint.hpp"
#include "rankprune/config.hpp"
#include "rankprune/csv.hpp"
#include "rankprune/svg.hpp"
#include "rankprune/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace rankprune;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> delta;
};

void apply(ExperimentConfig& c, const Overrides& o) {
  if (o.seed)
    c.train.seed = *o.seed;
  if (o.delta) {
    if (!(*o.delta > 0.0 && *o.delta < 1.0))
      throw ConfigError("--delta must lie in (0, 1)");
    c.train.rank.delta_rank_tolerance = *o.delta;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out)
    throw IoError("write to '" + path.string() + "' failed");
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create output directory '" + dir + "': " + ec.message());
  return dir;
}

json layer_report(const Layer& l, const RankLossConfig& rank, double delta, bool spectra) {
  const LayerRankStats s = layer_rank_stats(reshape_to_matrix(l), rank, delta);
  json j;
  j["shape"] = l.param.weight.shape;
  j["active"] = l.param.mask.active_count();
  j["sparsity"] = 1.0 - l.param.mask.density();
  j["delta_rank"] = s.delta_rank;
  if (spectra)
    j["spectrum"] = s.spectrum;
  return j;
}

json summary_of(const ExperimentConfig& c, const Trainer& t) {
  const Network& net = t.network();
  const double delta = c.train.rank.delta_rank_tolerance;
  json j;
  j["steps"] = t.state().step;
  j["lambda"] = c.train.rank.lambda;
  j["delta"] = delta;
  j["final_sparsity"] = net.sparsity();
  const auto& m = t.metrics();
  if (!m.empty() && m.back().eval_accuracy)
    j["eval_accuracy"] = *m.back().eval_accuracy;
  else
    j["eval_accuracy"] = nullptr;
  j["avg_delta_rank"] = average_delta_rank(net, delta, c.train.rank.norm_floor);
  j["rank_term_skips"] = t.rank_skips();
  j["layers"] = json::array();
  for (const Layer& l : net.layers())
    j["layers"].push_back(layer_report(l, c.train.rank, delta, false));
  std::ostringstream hash;
  hash << std::hex << config_hash(c);
  j["config_hash"] = hash.str();
  return j;
}

struct TrainOutcome {
  ExperimentConfig config;
  json summary;
  double accuracy = 0.0;
  double avg_delta_rank = 0.0;
};

// Runs (or resumes) one training and writes metrics, checkpoint and summary into `out`.
TrainOutcome run_training(ExperimentConfig cfg, const fs::path& out, const std::optional<std::string>& resume,
                          std::optional<std::size_t> stop_at, bool verbose) {
  std::optional<Checkpoint> ck;
  if (resume) {
    ck = load_checkpoint(*resume);
    if (ck->config_hash != config_hash(cfg))
      throw ConfigError("checkpoint '" + *resume + "' was written with a different configuration");
  }
  const auto [train_set, eval_set] = load_datasets(cfg);
  Trainer trainer(cfg.train, build_network(cfg), train_set, eval_set.size() ? &eval_set : nullptr);
  if (verbose)
    trainer.set_logger([](const std::string& msg) { std::cerr << msg << '\n'; });
  if (ck)
    trainer.restore(std::move(ck->state));
  trainer.run_until(stop_at.value_or(cfg.train.schedule.total_steps));

  write_text(out / cfg.report.metrics, metrics_csv(trainer.metrics()));
  save_checkpoint((out / cfg.report.checkpoint).string(), cfg, trainer.state());
  TrainOutcome r;
  r.summary = summary_of(cfg, trainer);
  write_text(out / cfg.report.summary, r.summary.dump(2) + "\n");
  r.config = cfg;
  r.avg_delta_rank = r.summary["avg_delta_rank"].get<double>();
  r.accuracy = r.summary["eval_accuracy"].is_null() ? trainer.evaluate() : r.summary["eval_accuracy"].get<double>();
  return r;
}

ExperimentConfig config_for(const std::optional<std::string>& path, const std::optional<std::string>& resume) {
  if (path)
    return load_config(*path);
  if (resume)
    return load_checkpoint(*resume).config;
  throw ConfigError("--config is required");
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1U, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RANKPRUNE_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end == env || *end != '\0' || v == 0)
      throw ConfigError("RANKPRUNE_THREADS must be a positive integer, got '" + std::string(env) + "'");
    n = std::min<std::size_t>(n, v);
  }
  return std::min(n, jobs);
}

std::string lambda_tag(double l) { return "lambda_" + format_double(l); }

int cmd_train(const std::optional<std::string>& config, const Overrides& ov, const std::string& out,
              const std::optional<std::string>& resume, std::optional<std::size_t> stop_at, bool verbose) {
  ExperimentConfig cfg = config_for(config, resume);
  apply(cfg, ov);
  const TrainOutcome r = run_training(cfg, prepare_dir(out), resume, stop_at, verbose);
  std::cout << r.summary.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const std::string& config, const Overrides& ov, const std::string& out,
              const std::vector<double>& lambdas, bool verbose) {
  if (lambdas.empty())
    throw ConfigError("--lambdas needs at least one value");
  for (double l : lambdas)
    if (!(l >= 0.0) || !std::isfinite(l))
      throw ConfigError("--lambdas: " + format_double(l) + " is not a finite value >= 0");
  ExperimentConfig base = load_config(config);
  apply(base, ov);
  const fs::path dir = prepare_dir(out);

  std::vector<SweepRow> rows(lambdas.size());
  std::vector<std::exception_ptr> errors(lambdas.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto work = [&] {
    for (std::size_t i; (i = next++) < lambdas.size();) {
      try {
        ExperimentConfig c = base;
        c.train.rank.lambda = lambdas[i];
        const std::string tag = lambda_tag(lambdas[i]);
        c.report.metrics = "metrics_" + tag + ".csv";
        c.report.checkpoint = "checkpoint_" + tag + ".bin";
        c.report.summary = "summary_" + tag + ".json";
        const TrainOutcome r = run_training(c, dir, std::nullopt, std::nullopt, verbose);
        rows[i] = {lambdas[i], r.avg_delta_rank, r.accuracy};
        const std::lock_guard lock(io);
        std::cerr << "lambda " << format_double(lambdas[i]) << ": avg delta-rank " << r.avg_delta_rank
                  << ", accuracy " << r.accuracy << '\n';
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t w = 1; w < worker_count(lambdas.size()); ++w)
    pool.emplace_back(work);
  work();
  pool.clear();
  for (const auto& e : errors)
    if (e)
      std::rethrow_exception(e);

  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  write_text(dir / "sweep.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

int cmd_analyze(const std::vector<std::string>& paths, std::optional<double> delta_override,
                const std::optional<std::string>& out) {
  if (paths.empty() || paths.size() > 2)
    throw ConfigError("analyze takes one checkpoint, or two to compare");
  std::vector<Checkpoint> cks;
  for (const auto& p : paths)
    cks.push_back(load_checkpoint(p));

  json doc;
  doc["checkpoints"] = json::array();
  for (std::size_t i = 0; i < cks.size(); ++i) {
    const Checkpoint& ck = cks[i];
    const double delta = delta_override.value_or(ck.config.train.rank.delta_rank_tolerance);
    if (!(delta > 0.0 && delta < 1.0))
      throw ConfigError("--delta must lie in (0, 1)");
    const Network& net = ck.state.net;
    json j;
    j["path"] = paths[i];
    j["step"] = ck.state.step;
    j["delta"] = delta;
    j["sparsity"] = net.sparsity();
    j["avg_delta_rank"] = average_delta_rank(net, delta, ck.config.train.rank.norm_floor);
    j["layers"] = json::array();
    for (const Layer& l : net.layers())
      j["layers"].push_back(layer_report(l, ck.config.train.rank, delta, true));
    doc["checkpoints"].push_back(std::move(j));
  }
  if (cks.size() == 2) {
    const auto& a = doc["checkpoints"][0];
    const auto& b = doc["checkpoints"][1];
    json cmp;
    cmp["avg_delta_rank_diff"] = b["avg_delta_rank"].get<double>() - a["avg_delta_rank"].get<double>();
    cmp["sparsity_diff"] = b["sparsity"].get<double>() - a["sparsity"].get<double>();
    if (a["layers"].size() == b["layers"].size()) {
      cmp["layer_delta_rank_diff"] = json::array();
      for (std::size_t l = 0; l < a["layers"].size(); ++l)
        cmp["layer_delta_rank_diff"].push_back(b["layers"][l]["delta_rank"].get<long long>() -
                                               a["layers"][l]["delta_rank"].get<long long>());
    }
    doc["comparison"] = cmp;
  }
  const std::string text = doc.dump(2) + "\n";
  if (out)
    write_text(*out, text);
  else
    std::cout << text;
  return 0;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::vector<std::string>& labels, const std::string& out) {
  if (csvs.empty())
    throw ConfigError("plot needs at least one CSV file");
  if (!labels.empty() && labels.size() != csvs.size())
    throw ConfigError("--labels must name every input file");
  std::vector<std::pair<std::string, CsvTable>> tables;
  for (std::size_t i = 0; i < csvs.size(); ++i) {
    CsvTable t = read_csv_file(csvs[i]);
    if (t.rows.empty())
      throw FormatError(csvs[i] + ": no data rows");
    tables.emplace_back(csvs[i], std::move(t));
  }
  auto charts = charts_from_tables(tables);
  for (auto& c : charts)
    for (std::size_t i = 0; i < c.series.size(); ++i)
      c.series[i].label = labels.empty() ? fs::path(csvs[i]).stem().string() : labels[i];
  const std::string svg = render_svg(charts);
  if (const auto parent = fs::path(out).parent_path(); !parent.empty())
    prepare_dir(parent.string());
  write_text(out, svg);
  std::cout << "wrote " << out << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rank-preserving gradual pruning: train, sweep lambda, analyze checkpoints, plot metrics"};
  app.require_subcommand(1);

  Overrides ov;
  std::optional<std::string> config, resume, analyze_out;
  std::optional<std::size_t> stop_at;
  std::optional<double> delta;
  std::string out = ".";
  std::vector<double> lambdas;
  std::vector<std::string> inputs, labels;
  bool verbose = false;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", ov.seed, "Override train.seed");
    cmd->add_option("--delta", ov.delta, "Override the delta used for delta-rank reporting");
    cmd->add_option("--out", out, "Output directory")->capture_default_str();
    cmd->add_flag("-v,--verbose", verbose, "Log skipped rank terms");
  };

  auto* train = app.add_subcommand("train", "Train one network and write metrics, checkpoint and summary");
  train->add_option("--config", config, "Experiment config file");
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--stop-at", stop_at, "Stop after this step (checkpoint is written there)");
  common(train);

  auto* sweep = app.add_subcommand("sweep-lambda", "Train once per lambda and write sweep.csv");
  sweep->add_option("--config", config, "Experiment config file")->required();
  sweep->add_option("--lambdas", lambdas, "Comma-separated lambda values")->required()->delimiter(',');
  common(sweep);

  auto* analyze = app.add_subcommand("analyze", "Per-layer delta-ranks and spectra of one or two checkpoints");
  analyze->add_option("checkpoints", inputs, "Checkpoint file(s)")->required()->expected(1, 2);
  analyze->add_option("--delta", delta, "Delta for delta-rank (default: the checkpoint's)");
  analyze->add_option("--out", analyze_out, "Write JSON here instead of stdout");

  auto* plot = app.add_subcommand("plot", "SVG line charts from metrics or sweep CSV files");
  plot->add_option("csv", inputs, "CSV file(s)")->required();
  plot->add_option("--labels", labels, "Legend labels, one per file")->delimiter(',');
  plot->add_option("--out", out, "Output SVG path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train)
      return cmd_train(config, ov, out, resume, stop_at, verbose);
    if (*sweep)
      return cmd_sweep(*config, ov, out, lambdas, verbose);
    if (*analyze)
      return cmd_analyze(inputs, delta, analyze_out);
    if (*plot)
      return cmd_plot(inputs, labels, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
