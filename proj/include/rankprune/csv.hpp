#pragma once

// Metrics and sweep CSV files.

#include "rankprune/errors.hpp"
#include "rankprune/trainer.hpp"

#include <charconv>
#include <cstddef>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rankprune {

inline constexpr std::string_view kMetricsHeader = "step,sparsity,task_loss,rank_loss,avg_delta_rank,train_acc,eval_acc";
inline constexpr std::string_view kSweepHeader = "lambda,avg_delta_rank,accuracy";

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

/// A numeric CSV table. Empty cells are `std::nullopt`.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> rows;
  std::vector<std::size_t> row_lines;  // 1-based source line of each row

  [[nodiscard]] std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name)
        return i;
    return std::nullopt;
  }
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos)
      return out;
    start = comma + 1;
  }
}

} // namespace detail

/// Parses a header line plus numeric rows. Errors name the offending line.
inline CsvTable parse_csv(const std::string& text, const std::string& source = "csv") {
  CsvTable t;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r')
      raw.pop_back();
    if (raw.empty())
      continue;
    const auto cells = detail::split_commas(raw);
    if (!header) {
      for (auto c : cells) {
        if (c.empty())
          throw FormatError(source + ":" + std::to_string(lineno) + ": empty column name in header");
        t.columns.emplace_back(c);
      }
      header = true;
      continue;
    }
    if (cells.size() != t.columns.size())
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size()) +
                        " fields, found " + std::to_string(cells.size()));
    std::vector<std::optional<double>> row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto c = cells[i];
      if (c.empty()) {
        row.emplace_back();
        continue;
      }
      double v = 0.0;
      const auto r = std::from_chars(c.data(), c.data() + c.size(), v);
      if (r.ec != std::errc{} || r.ptr != c.data() + c.size())
        throw FormatError(source + ":" + std::to_string(lineno) + ": column '" + t.columns[i] + "': '" +
                          std::string(c) + "' is not a number");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
    t.row_lines.push_back(lineno);
  }
  if (!header)
    throw FormatError(source + ": empty file (no header line)");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path);
}

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << format_double(r.sparsity) << ',' << format_double(r.task_loss) << ','
        << format_double(r.rank_loss) << ',' << format_double(r.avg_delta_rank) << ','
        << format_double(r.train_accuracy) << ',';
    if (r.eval_accuracy)
      out << format_double(*r.eval_accuracy);
    out << '\n';
  }
}

inline std::string metrics_csv(const std::vector<MetricsRecord>& rows) {
  std::ostringstream o;
  write_metrics_csv(o, rows);
  return o.str();
}

inline std::vector<MetricsRecord> parse_metrics_csv(const std::string& text, const std::string& source = "csv") {
  const CsvTable t = parse_csv(text, source);
  std::string header;
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    header += (i ? "," : "") + t.columns[i];
  if (header != kMetricsHeader)
    throw FormatError(source + ":1: header is not '" + std::string(kMetricsHeader) + "'");
  std::vector<MetricsRecord> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    for (std::size_t c = 0; c + 1 < row.size(); ++c)
      if (!row[c])
        throw FormatError(source + ":" + std::to_string(t.row_lines[i]) + ": column '" + t.columns[c] +
                          "' is empty");
    MetricsRecord r;
    r.step = static_cast<std::size_t>(*row[0]);
    r.sparsity = *row[1];
    r.task_loss = *row[2];
    r.rank_loss = *row[3];
    r.avg_delta_rank = *row[4];
    r.train_accuracy = *row[5];
    r.eval_accuracy = row[6];
    out.push_back(r);
  }
  return out;
}

struct SweepRow {
  double lambda = 0.0;
  double avg_delta_rank = 0.0;
  double accuracy = 0.0;
  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepHeader << '\n';
  for (const auto& r : rows)
    out << format_double(r.lambda) << ',' << format_double(r.avg_delta_rank) << ',' << format_double(r.accuracy)
        << '\n';
}

} // namespace rankprune
