#pragma once

// Self-contained SVG line charts for metrics and lambda-sweep CSVs.

#include "rankprune/csv.hpp"
#include "rankprune/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rankprune {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  // When set, x values are indices into these labels (evenly spaced categories).
  std::vector<std::string> x_categories;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

// Roughly five round-numbered ticks covering [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step)
    out.push_back(t);
  return out;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};

inline void render_panel(std::ostringstream& o, const Chart& c, double top) {
  constexpr double width = 640, height = 400;
  constexpr double left = 70, right = 20, ptop = 40, bottom = 55;
  const double pw = width - left - right, ph = height - ptop - bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : c.series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (!c.x_categories.empty()) {
    xmin = 0;
    xmax = static_cast<double>(c.x_categories.size() - 1);
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  } else {
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
  }
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + ptop + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  o << "<text x=\"" << num(width / 2) << "\" y=\"" << num(top + 24)
    << "\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(c.title) << "</text>\n";
  o << "<rect x=\"" << num(left) << "\" y=\"" << num(top + ptop) << "\" width=\"" << num(pw) << "\" height=\""
    << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";

  for (double t : nice_ticks(ymin, ymax)) {
    o << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(t)) << "\" x2=\"" << num(left + pw) << "\" y2=\""
      << num(py(t)) << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(t) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
      << tick_label(t) << "</text>\n";
  }
  if (c.x_categories.empty()) {
    for (double t : nice_ticks(xmin, xmax))
      o << "<text x=\"" << num(px(t)) << "\" y=\"" << num(top + ptop + ph + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << tick_label(t) << "</text>\n";
  } else {
    for (std::size_t i = 0; i < c.x_categories.size(); ++i)
      o << "<text x=\"" << num(px(static_cast<double>(i))) << "\" y=\"" << num(top + ptop + ph + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << xml_escape(c.x_categories[i]) << "</text>\n";
  }
  o << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(top + height - 12)
    << "\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(c.x_label) << "</text>\n";
  o << "<text transform=\"translate(18 " << num(top + ptop + ph / 2)
    << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">" << xml_escape(c.y_label) << "</text>\n";

  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const auto& s = c.series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    o << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < s.points.size(); ++k)
      o << (k ? " " : "") << num(px(s.points[k].first)) << ',' << num(py(s.points[k].second));
    o << "\"/>\n";
    for (auto [x, y] : s.points)
      o << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2.5\" fill=\"" << color
        << "\"/>\n";
  }

  const double lx = left + pw - 170, ly = top + ptop + 10;
  o << "<g class=\"legend\">\n";
  o << "<rect x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" width=\"160\" height=\""
    << num(8 + 18.0 * static_cast<double>(c.series.size())) << "\" fill=\"white\" fill-opacity=\"0.85\" stroke=\"#999\"/>\n";
  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const double y = ly + 16 + 18.0 * static_cast<double>(i);
    o << "<g class=\"legend-entry\"><line x1=\"" << num(lx + 8) << "\" y1=\"" << num(y - 4) << "\" x2=\""
      << num(lx + 30) << "\" y2=\"" << num(y - 4) << "\" stroke=\"" << kPalette[i % std::size(kPalette)]
      << "\" stroke-width=\"2\"/><text x=\"" << num(lx + 36) << "\" y=\"" << num(y) << "\" font-size=\"11\">"
      << xml_escape(c.series[i].label) << "</text></g>\n";
  }
  o << "</g>\n";
}

} // namespace detail

/// Panels stacked vertically in a single SVG document.
inline std::string render_svg(const std::vector<Chart>& panels) {
  if (panels.empty())
    throw DomainError("render_svg: nothing to draw");
  for (const auto& c : panels) {
    bool any = false;
    for (const auto& s : c.series)
      any = any || !s.points.empty();
    if (!any)
      throw DomainError("render_svg: chart '" + c.title + "' has no data points");
  }
  std::ostringstream o;
  const double h = 400.0 * static_cast<double>(panels.size());
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"" << detail::num(h)
    << "\" viewBox=\"0 0 640 " << detail::num(h) << "\" font-family=\"sans-serif\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i)
    detail::render_panel(o, panels[i], 400.0 * static_cast<double>(i));
  o << "</svg>\n";
  return o.str();
}

enum class CsvKind { metrics, sweep };

inline CsvKind detect_kind(const CsvTable& t, const std::string& source) {
  std::string header;
  for (std::size_t i = 0; i < t.columns.size(); ++i)
    header += (i ? "," : "") + t.columns[i];
  if (header == kMetricsHeader)
    return CsvKind::metrics;
  if (header == kSweepHeader)
    return CsvKind::sweep;
  throw FormatError(source + ":1: unrecognized header '" + header + "'");
}

/// Charts for a set of labelled CSV tables of one kind: metrics files give
/// rank vs. sparsity and rank vs. step; sweep files give rank and accuracy vs. lambda.
inline std::vector<Chart> charts_from_tables(const std::vector<std::pair<std::string, CsvTable>>& tables) {
  if (tables.empty())
    throw DomainError("plot: no input files");
  const CsvKind kind = detect_kind(tables.front().second, tables.front().first);
  for (const auto& [name, t] : tables) {
    if (detect_kind(t, name) != kind)
      throw FormatError(name + ": cannot mix metrics and sweep files in one plot");
    if (t.rows.empty())
      throw FormatError(name + ": no data rows");
  }
  auto column = [](const std::string& name, const CsvTable& t, std::size_t row, std::string_view col) {
    const auto v = t.rows[row][*t.column(col)];
    if (!v)
      throw FormatError(name + ":" + std::to_string(t.row_lines[row]) + ": column '" + std::string(col) +
                        "' is empty");
    return *v;
  };

  if (kind == CsvKind::metrics) {
    Chart a{"Average delta-rank vs. sparsity", "sparsity", "avg delta-rank", {}, {}};
    Chart b{"Average delta-rank vs. step", "step", "avg delta-rank", {}, {}};
    for (const auto& [name, t] : tables) {
      Series sa{name, {}}, sb{name, {}};
      for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double rank = column(name, t, r, "avg_delta_rank");
        sa.points.emplace_back(column(name, t, r, "sparsity"), rank);
        sb.points.emplace_back(column(name, t, r, "step"), rank);
      }
      a.series.push_back(std::move(sa));
      b.series.push_back(std::move(sb));
    }
    return {a, b};
  }

  std::set<double> lambdas;
  for (const auto& [name, t] : tables)
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      lambdas.insert(column(name, t, r, "lambda"));
  std::map<double, double> pos;
  std::vector<std::string> cats;
  for (double l : lambdas) {
    pos[l] = static_cast<double>(cats.size());
    cats.push_back(detail::tick_label(l));
  }
  Chart a{"Average delta-rank vs. lambda", "lambda", "avg delta-rank", {}, cats};
  Chart b{"Accuracy vs. lambda", "lambda", "accuracy", {}, cats};
  for (const auto& [name, t] : tables) {
    Series sa{name, {}}, sb{name, {}};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const double x = pos.at(column(name, t, r, "lambda"));
      sa.points.emplace_back(x, column(name, t, r, "avg_delta_rank"));
      sb.points.emplace_back(x, column(name, t, r, "accuracy"));
    }
    std::sort(sa.points.begin(), sa.points.end());
    std::sort(sb.points.begin(), sb.points.end());
    a.series.push_back(std::move(sa));
    b.series.push_back(std::move(sb));
  }
  return {a, b};
}

} // namespace rankprune
