#pragma once

// Experiment configuration files.
//
// A flat, sectioned key = value format:
//
//   [model]
//   input = [64]
//   layers = ["dense:128:relu", "dense:128:relu", "dense:10:none"]
//
//   [schedule]
//   final_sparsity = 0.99
//
// Values are typed: quoted strings, integers, reals, true/false, and
// one-line arrays of those. '#' starts a comment outside of strings.

#include "rankprune/data.hpp"
#include "rankprune/errors.hpp"
#include "rankprune/model.hpp"
#include "rankprune/trainer.hpp"

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

namespace rankprune {

enum class DataSource { synthetic, idx };

struct DataConfig {
  DataSource source = DataSource::synthetic;
  SyntheticDatasetSpec synthetic;
  std::size_t eval_samples_per_class = 100;  // held-out draw; 0 disables evaluation
  std::string train_images, train_labels, eval_images, eval_labels;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ReportConfig {
  std::string metrics = "metrics.csv";
  std::string checkpoint = "checkpoint.bin";
  std::string summary = "summary.json";
  friend bool operator==(const ReportConfig&, const ReportConfig&) = default;
};

struct ExperimentConfig {
  Shape input{64};
  std::vector<LayerSpec> layers{parse_layer_spec("dense:128:relu"), parse_layer_spec("dense:128:relu"),
                                parse_layer_spec("dense:10:none")};
  DataConfig data;
  TrainConfig train;
  ReportConfig report;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

struct ConfigValue {
  using Scalar = std::variant<std::string, std::int64_t, std::uint64_t, double, bool>;  // uint64 only above INT64_MAX
  std::variant<Scalar, std::vector<Scalar>> value;
  std::size_t line = 0;
};

inline std::string format_real(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".eEn") == std::string::npos)
    s += ".0";
  return s;
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\')
      out += '\\';
    out += c;
  }
  return out + '"';
}

class ConfigParser {
public:
  ConfigParser(std::string_view line, std::size_t lineno) : s_(line), line_(lineno) {}

  ConfigValue parse_value() {
    skip_ws();
    ConfigValue v;
    v.line = line_;
    if (peek() == '[') {
      ++pos_;
      std::vector<ConfigValue::Scalar> items;
      skip_ws();
      if (peek() == ']') {
        ++pos_;
      } else {
        for (;;) {
          items.push_back(parse_scalar());
          skip_ws();
          if (peek() == ',') {
            ++pos_;
            continue;
          }
          if (peek() == ']') {
            ++pos_;
            break;
          }
          fail("expected ',' or ']' in array");
        }
      }
      v.value = std::move(items);
    } else {
      v.value = parse_scalar();
    }
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] != '#')
      fail("unexpected trailing text '" + std::string(s_.substr(pos_)) + "'");
    return v;
  }

private:
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(msg, line_); }
  [[nodiscard]] char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t'))
      ++pos_;
  }

  ConfigValue::Scalar parse_scalar() {
    skip_ws();
    if (peek() == '"') {
      ++pos_;
      std::string out;
      while (pos_ < s_.size() && s_[pos_] != '"') {
        if (s_[pos_] == '\\' && pos_ + 1 < s_.size())
          ++pos_;
        out += s_[pos_++];
      }
      if (pos_ >= s_.size())
        fail("unterminated string");
      ++pos_;
      return out;
    }
    const std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != ' ' && s_[pos_] != '\t' &&
           s_[pos_] != '#')
      ++pos_;
    const std::string_view tok = s_.substr(start, pos_ - start);
    if (tok.empty())
      fail("missing value");
    if (tok == "true")
      return true;
    if (tok == "false")
      return false;
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    if (tok.find_first_of(".eEn") == std::string_view::npos) {
      std::int64_t i = 0;
      const auto r = std::from_chars(b, e, i);
      if (r.ec == std::errc{} && r.ptr == e)
        return i;
      std::uint64_t u = 0;
      if (const auto ru = std::from_chars(b, e, u); ru.ec == std::errc{} && ru.ptr == e)
        return u;
    } else {
      double d = 0.0;
      const auto r = std::from_chars(b, e, d);
      if (r.ec == std::errc{} && r.ptr == e)
        return d;
    }
    fail("cannot parse value '" + std::string(tok) + "' (strings must be quoted)");
  }

  std::string_view s_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

using ConfigTable = std::map<std::string, ConfigValue>;  // "section.key" -> value

inline ConfigTable parse_config_table(const std::string& text) {
  ConfigTable table;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t'))
      line.remove_prefix(1);
    if (line.empty() || line.front() == '#')
      continue;
    if (line.front() == '[') {
      const auto close = line.find(']');
      if (close == std::string_view::npos || close == 1)
        throw ConfigError("malformed section header '" + std::string(line) + "'", lineno);
      section = std::string(line.substr(1, close - 1));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("expected 'key = value', got '" + std::string(line) + "'", lineno);
    std::string_view key = line.substr(0, eq);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t'))
      key.remove_suffix(1);
    if (key.empty())
      throw ConfigError("empty key", lineno);
    if (section.empty())
      throw ConfigError("key '" + std::string(key) + "' appears before any [section]", lineno);
    const std::string full = section + "." + std::string(key);
    if (table.contains(full))
      throw ConfigError("duplicate key '" + full + "' (first set on line " +
                            std::to_string(table.at(full).line) + ")",
                        lineno);
    table[full] = ConfigParser(line.substr(eq + 1), lineno).parse_value();
  }
  return table;
}

// Typed accessors that consume entries from the table so leftovers can be
// reported as unknown keys.
class ConfigReader {
public:
  explicit ConfigReader(ConfigTable t) : t_(std::move(t)) {}

  template <class T, class Check>
  void read(const std::string& key, T& dst, Check check) {
    const auto it = t_.find(key);
    if (it == t_.end())
      return;
    const ConfigValue v = it->second;
    t_.erase(it);
    dst = convert<T>(key, v);
    if (const std::string why = check(dst); !why.empty())
      throw ConfigError(key + " " + why, v.line);
  }
  template <class T>
  void read(const std::string& key, T& dst) {
    read(key, dst, [](const T&) { return std::string{}; });
  }

  [[nodiscard]] std::size_t line_of(const std::string& key) const {
    const auto it = lines_.find(key);
    return it == lines_.end() ? 0 : it->second;
  }

  void reject_unknown() const {
    if (!t_.empty()) {
      const auto& [k, v] = *t_.begin();
      throw ConfigError("unknown key '" + k + "'", v.line);
    }
  }

private:
  template <class T>
  T convert(const std::string& key, const ConfigValue& v) {
    lines_[key] = v.line;
    auto bad = [&](const char* want) -> ConfigError { return {key + " must be " + want, v.line}; };
    if constexpr (std::is_same_v<T, std::vector<std::string>> || std::is_same_v<T, std::vector<std::size_t>>) {
      const auto* arr = std::get_if<std::vector<ConfigValue::Scalar>>(&v.value);
      if (!arr)
        throw bad("an array");
      T out;
      for (const auto& s : *arr)
        out.push_back(convert_scalar<typename T::value_type>(s, bad));
      return out;
    } else {
      const auto* s = std::get_if<ConfigValue::Scalar>(&v.value);
      if (!s)
        throw bad("a scalar");
      return convert_scalar<T>(*s, bad);
    }
  }

  template <class T, class Bad>
  static T convert_scalar(const ConfigValue::Scalar& s, Bad bad) {
    if constexpr (std::is_same_v<T, std::string>) {
      if (const auto* p = std::get_if<std::string>(&s))
        return *p;
      throw bad("a quoted string");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (const auto* p = std::get_if<bool>(&s))
        return *p;
      throw bad("true or false");
    } else if constexpr (std::is_same_v<T, double>) {
      if (const auto* p = std::get_if<double>(&s))
        return *p;
      if (const auto* p = std::get_if<std::int64_t>(&s))
        return static_cast<double>(*p);
      if (const auto* p = std::get_if<std::uint64_t>(&s))
        return static_cast<double>(*p);
      throw bad("a number");
    } else {
      if (const auto* p = std::get_if<std::int64_t>(&s)) {
        if (*p < 0)
          throw bad("a non-negative integer");
        return static_cast<T>(*p);
      }
      if (const auto* p = std::get_if<std::uint64_t>(&s); p && *p <= std::numeric_limits<T>::max())
        return static_cast<T>(*p);
      throw bad("an integer");
    }
  }

  ConfigTable t_;
  std::map<std::string, std::size_t> lines_;
};

inline std::string in_unit_open(double v) { return v > 0.0 && v < 1.0 ? "" : "must lie in (0, 1), got " + format_real(v); }
inline std::string positive(std::size_t v) { return v > 0 ? "" : "must be positive, got " + std::to_string(v); }

} // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  using detail::format_real;
  detail::ConfigReader r(detail::parse_config_table(text));
  ExperimentConfig c;

  std::vector<std::size_t> input(c.input.begin(), c.input.end());
  r.read("model.input", input, [](const std::vector<std::size_t>& v) {
    if (v.empty() || v.size() > 3)
      return std::string("must list 1 (features) or 3 (channels, h, w) dimensions");
    for (auto d : v)
      if (d == 0)
        return std::string("dimensions must be positive");
    return std::string{};
  });
  c.input.assign(input.begin(), input.end());
  std::vector<std::string> layers;
  for (const auto& l : c.layers)
    layers.push_back(format_layer_spec(l));
  r.read("model.layers", layers, [](const std::vector<std::string>& v) {
    return v.empty() ? std::string("must name at least one layer") : std::string{};
  });
  c.layers.clear();
  for (const auto& l : layers) {
    try {
      c.layers.push_back(parse_layer_spec(l));
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("model.layers: ") + e.what(), r.line_of("model.layers"));
    }
  }

  DataConfig& d = c.data;
  std::string source = "synthetic";
  r.read("data.source", source, [](const std::string& s) {
    return s == "synthetic" || s == "idx" ? std::string{} : "must be \"synthetic\" or \"idx\", got \"" + s + "\"";
  });
  d.source = source == "idx" ? DataSource::idx : DataSource::synthetic;
  r.read("data.num_classes", d.synthetic.num_classes,
         [](std::size_t v) { return v >= 2 ? std::string{} : "must be >= 2, got " + std::to_string(v); });
  r.read("data.features", d.synthetic.features, detail::positive);
  r.read("data.samples_per_class", d.synthetic.samples_per_class, detail::positive);
  r.read("data.cluster_spread", d.synthetic.cluster_spread,
         [](double v) { return v > 0.0 ? std::string{} : "must be > 0, got " + format_real(v); });
  r.read("data.seed", d.synthetic.seed);
  r.read("data.eval_samples_per_class", d.eval_samples_per_class);
  r.read("data.train_images", d.train_images);
  r.read("data.train_labels", d.train_labels);
  r.read("data.eval_images", d.eval_images);
  r.read("data.eval_labels", d.eval_labels);

  TrainConfig& t = c.train;
  r.read("schedule.final_sparsity", t.schedule.final_sparsity, [](double v) {
    return v >= 0.0 && v < 1.0 ? std::string{} : "must lie in [0, 1), got " + format_real(v);
  });
  r.read("schedule.prune_steps", t.schedule.prune_steps, detail::positive);
  r.read("schedule.update_interval", t.schedule.update_interval, detail::positive);
  r.read("schedule.total_steps", t.schedule.total_steps, detail::positive);
  std::string kind = to_string(t.schedule.kind);
  r.read("schedule.kind", kind, [](const std::string& s) {
    return s == "cubic" || s == "linear" ? std::string{} : "must be \"cubic\" or \"linear\", got \"" + s + "\"";
  });
  t.schedule.kind = kind == "linear" ? ScheduleKind::linear : ScheduleKind::cubic;
  r.read("schedule.alpha0", t.grow.alpha0, detail::in_unit_open);

  r.read("train.learning_rate", t.learning_rate,
         [](double v) { return v > 0.0 ? std::string{} : "must be > 0, got " + format_real(v); });
  r.read("train.momentum", t.momentum,
         [](double v) { return v >= 0.0 && v < 1.0 ? std::string{} : "must lie in [0, 1), got " + format_real(v); });
  r.read("train.weight_decay", t.weight_decay,
         [](double v) { return v >= 0.0 ? std::string{} : "must be >= 0, got " + format_real(v); });
  r.read("train.batch_size", t.batch_size, detail::positive);
  r.read("train.seed", t.seed);
  r.read("train.cosine_lr", t.cosine_lr);
  r.read("train.log_interval", t.log_interval, detail::positive);
  r.read("train.eval_interval", t.eval_interval);

  r.read("rank.lambda", t.rank.lambda, [](double v) {
    return std::isfinite(v) && v >= 0.0 ? std::string{} : "must be finite and >= 0, got " + format_real(v);
  });
  r.read("rank.target_error", t.rank.target_error, detail::in_unit_open);
  r.read("rank.delta", t.rank.delta_rank_tolerance, detail::in_unit_open);
  r.read("rank.norm_floor", t.rank.norm_floor,
         [](double v) { return v > 0.0 ? std::string{} : "must be > 0, got " + format_real(v); });

  r.read("report.metrics", c.report.metrics);
  r.read("report.checkpoint", c.report.checkpoint);
  r.read("report.summary", c.report.summary);
  r.reject_unknown();

  if (t.schedule.total_steps < t.schedule.prune_steps)
    throw ConfigError("schedule.total_steps (" + std::to_string(t.schedule.total_steps) +
                          ") must be >= schedule.prune_steps (" + std::to_string(t.schedule.prune_steps) + ")",
                      r.line_of("schedule.total_steps"));
  if (t.schedule.prune_steps % t.schedule.update_interval != 0)
    throw ConfigError("schedule.prune_steps must be a multiple of schedule.update_interval",
                      r.line_of("schedule.prune_steps"));
  if (d.source == DataSource::idx && (d.train_images.empty() || d.train_labels.empty()))
    throw ConfigError("data.source = \"idx\" needs data.train_images and data.train_labels",
                      r.line_of("data.source"));
  if (d.source == DataSource::synthetic && (c.input.size() != 1 || c.input[0] != d.synthetic.features))
    throw ConfigError("model.input must be [" + std::to_string(d.synthetic.features) +
                          "] to match data.features",
                      r.line_of("model.input"));
  try {
    t.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::format_real;
  using detail::quote;
  std::ostringstream o;
  auto sizes = [](const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i)
      out += (i ? ", " : "") + std::to_string(s[i]);
    return out + "]";
  };
  o << "[model]\n";
  o << "input = " << sizes(c.input) << "\n";
  o << "layers = [";
  for (std::size_t i = 0; i < c.layers.size(); ++i)
    o << (i ? ", " : "") << quote(format_layer_spec(c.layers[i]));
  o << "]\n\n";

  const DataConfig& d = c.data;
  o << "[data]\n";
  o << "source = " << quote(d.source == DataSource::idx ? "idx" : "synthetic") << "\n";
  o << "num_classes = " << d.synthetic.num_classes << "\n";
  o << "features = " << d.synthetic.features << "\n";
  o << "samples_per_class = " << d.synthetic.samples_per_class << "\n";
  o << "cluster_spread = " << format_real(d.synthetic.cluster_spread) << "\n";
  o << "seed = " << d.synthetic.seed << "\n";
  o << "eval_samples_per_class = " << d.eval_samples_per_class << "\n";
  o << "train_images = " << quote(d.train_images) << "\n";
  o << "train_labels = " << quote(d.train_labels) << "\n";
  o << "eval_images = " << quote(d.eval_images) << "\n";
  o << "eval_labels = " << quote(d.eval_labels) << "\n\n";

  const TrainConfig& t = c.train;
  o << "[schedule]\n";
  o << "final_sparsity = " << format_real(t.schedule.final_sparsity) << "\n";
  o << "prune_steps = " << t.schedule.prune_steps << "\n";
  o << "update_interval = " << t.schedule.update_interval << "\n";
  o << "total_steps = " << t.schedule.total_steps << "\n";
  o << "kind = " << quote(to_string(t.schedule.kind)) << "\n";
  o << "alpha0 = " << format_real(t.grow.alpha0) << "\n\n";

  o << "[train]\n";
  o << "learning_rate = " << format_real(t.learning_rate) << "\n";
  o << "momentum = " << format_real(t.momentum) << "\n";
  o << "weight_decay = " << format_real(t.weight_decay) << "\n";
  o << "batch_size = " << t.batch_size << "\n";
  o << "seed = " << t.seed << "\n";
  o << "cosine_lr = " << (t.cosine_lr ? "true" : "false") << "\n";
  o << "log_interval = " << t.log_interval << "\n";
  o << "eval_interval = " << t.eval_interval << "\n\n";

  o << "[rank]\n";
  o << "lambda = " << format_real(t.rank.lambda) << "\n";
  o << "target_error = " << format_real(t.rank.target_error) << "\n";
  o << "delta = " << format_real(t.rank.delta_rank_tolerance) << "\n";
  o << "norm_floor = " << format_real(t.rank.norm_floor) << "\n\n";

  o << "[report]\n";
  o << "metrics = " << quote(c.report.metrics) << "\n";
  o << "checkpoint = " << quote(c.report.checkpoint) << "\n";
  o << "summary = " << quote(c.report.summary) << "\n";
  return o.str();
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of the canonical serialization, so formatting differences do not matter.
inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(serialize_config(c)); }

/// Builds the train and (optional) held-out datasets named by the config.
inline std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& c) {
  if (c.data.source == DataSource::idx) {
    Dataset train = load_idx_dataset(c.data.train_images, c.data.train_labels);
    Dataset eval;
    if (!c.data.eval_images.empty())
      eval = load_idx_dataset(c.data.eval_images, c.data.eval_labels);
    return {std::move(train), std::move(eval)};
  }
  Dataset train = make_blobs(c.data.synthetic, 0);
  Dataset eval;
  if (c.data.eval_samples_per_class > 0) {
    SyntheticDatasetSpec es = c.data.synthetic;
    es.samples_per_class = c.data.eval_samples_per_class;
    eval = make_blobs(es, 1);
  }
  return {std::move(train), std::move(eval)};
}

inline Network build_network(const ExperimentConfig& c) {
  return Network(c.input, c.layers, c.train.seed);
}

} // namespace rankprune
