#pragma once

// results.csv, overlap.csv and two static SVG charts.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cia/csv.hpp"
#include "cia/experiments.hpp"

namespace cia {

inline constexpr std::string_view kResultsHeader =
    "method,alpha,coverage_mean,coverage_std,size_mean,size_std,reps,n_infinite";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{:.6f}", v);
}

inline std::vector<MethodResult> sorted_results(std::vector<MethodResult> results) {
  std::stable_sort(results.begin(), results.end(), [](const MethodResult& a, const MethodResult& b) {
    return std::pair{static_cast<int>(a.method), a.alpha} < std::pair{static_cast<int>(b.method), b.alpha};
  });
  return results;
}

inline void write_results_csv(std::ostream& out, const std::vector<MethodResult>& results) {
  out << kResultsHeader << '\n';
  for (const auto& r : sorted_results(results))
    out << fmt::format("{},{},{},{},{},{},{},{}\n", to_string(r.method), format_number(r.alpha), format_number(r.mean_coverage),
                       format_number(r.coverage_std), format_number(r.mean_size), format_number(r.size_std), r.reps,
                       r.infinite_interval_count);
}

inline double parse_number(std::string_view text, std::size_t line) {
  text = detail::trim(text);
  if (text == "inf") return kInf;
  if (text == "-inf") return -kInf;
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  const auto v = parse_double(text);
  if (!v) throw ParseError(line, fmt::format("'{}' is not a number", text));
  return *v;
}

inline std::vector<MethodResult> read_results_csv(std::istream& in) {
  const CsvTable t = parse_csv(in);
  std::vector<std::size_t> col;
  for (std::string_view name : {"method", "alpha", "coverage_mean", "coverage_std", "size_mean", "size_std", "reps", "n_infinite"}) {
    const auto c = t.column(name);
    if (!c) throw ParseError(1, fmt::format("missing column '{}'", name));
    col.push_back(*c);
  }
  std::vector<MethodResult> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::size_t line = t.line_of_row[r];
    MethodResult m;
    try {
      m.method = parse_method(detail::trim(row[col[0]]));
    } catch (const InputError& e) {
      throw ParseError(line, e.what());
    }
    m.alpha = parse_number(row[col[1]], line);
    m.mean_coverage = parse_number(row[col[2]], line);
    m.coverage_std = parse_number(row[col[3]], line);
    m.mean_size = parse_number(row[col[4]], line);
    m.size_std = parse_number(row[col[5]], line);
    const auto reps = parse_int(row[col[6]]);
    const auto n_inf = parse_int(row[col[7]]);
    if (!reps || *reps < 0 || !n_inf || *n_inf < 0) throw ParseError(line, "reps and n_infinite must be non-negative integers");
    m.reps = static_cast<std::size_t>(*reps);
    m.infinite_interval_count = static_cast<std::size_t>(*n_inf);
    out.push_back(m);
  }
  return out;
}

inline std::vector<MethodResult> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  return read_results_csv(in);
}

inline void write_overlap_csv(std::ostream& out, const std::vector<OverlapRow>& rows) {
  out << "min_len,method,alpha,delta_avg,delta_max,coverage,coverage_gap,size,reps\n";
  for (const auto& r : rows)
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", r.min_path_len, to_string(r.method), format_number(r.alpha),
                       format_number(r.delta_avg), format_number(r.delta_max), format_number(r.coverage),
                       format_number(r.coverage_gap), format_number(r.size), r.reps);
}

namespace detail {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

inline constexpr std::array<std::string_view, 10> kPalette{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

inline std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) return {lo - 0.05 * std::max(1.0, std::abs(lo)), hi + 0.05 * std::max(1.0, std::abs(hi))};
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

// Line chart with axes, five ticks per axis and a legend.
inline std::string line_chart_svg(const std::vector<Series>& series, std::string_view title, std::string_view xlabel,
                                  std::string_view ylabel, bool diagonal) {
  constexpr double W = 640, H = 480, L = 70, R = 170, T = 40, B = 60;
  double x0 = kInf, x1 = -kInf, y0 = kInf, y1 = -kInf;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (diagonal) {
    y0 = std::min(y0, x0);
    y1 = std::max(y1, x1);
    x0 = std::min(x0, y0);
    x1 = std::max(x1, y1);
  }
  std::tie(x0, x1) = padded(x0, x1);
  std::tie(y0, y1) = padded(y0, y1);
  const double pw = W - L - R, ph = H - T - B;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return T + ph - (y - y0) / (y1 - y0) * ph; };

  std::string svg = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{3}</text>\n",
      W, H, L + pw / 2, title);
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", L, T, pw, ph);
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"black\"/>\n", sx(xv), T + ph, T + ph + 5);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", sx(xv), T + ph + 18, xv);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n", L - 5, sy(yv), L);
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{:.3g}</text>\n", L - 8, sy(yv) + 4, yv);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", L + pw / 2, H - 15, xlabel);
  svg += fmt::format("<text x=\"18\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">{1}</text>\n", T + ph / 2,
                     ylabel);
  if (diagonal) {
    const double a = std::max(x0, y0), b = std::min(x1, y1);
    svg += fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>\n", sx(a), sy(a),
        sx(b), sy(b));
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto colour = kPalette[k % kPalette.size()];
    const auto& s = series[k];
    if (s.points.size() > 1) {
      std::string pts;
      for (auto [x, y] : s.points) pts += fmt::format("{:.2f},{:.2f} ", sx(x), sy(y));
      pts.pop_back();
      svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", pts, colour);
    }
    for (auto [x, y] : s.points)
      svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3.5\" fill=\"{}\"/>\n", sx(x), sy(y), colour);
    const double ly = T + 10 + 18.0 * static_cast<double>(k);
    svg += fmt::format("<rect x=\"{}\" y=\"{:.2f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", W - R + 15, ly, colour);
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\">{}</text>\n", W - R + 32, ly + 10, s.name);
  }
  svg += "</svg>\n";
  return svg;
}

inline std::vector<Series> series_of(const std::vector<MethodResult>& results, bool coverage_chart) {
  std::map<int, Series> by_method;
  for (const auto& r : sorted_results(results)) {
    auto& s = by_method[static_cast<int>(r.method)];
    s.name = std::string(to_string(r.method));
    if (coverage_chart) {
      s.points.emplace_back(1.0 - r.alpha, r.mean_coverage);
    } else if (std::isfinite(r.mean_size)) {
      s.points.emplace_back(r.mean_coverage, r.mean_size);
    }
  }
  std::vector<Series> out;
  for (auto& [k, s] : by_method) {
    std::sort(s.points.begin(), s.points.end());
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << content;
  out.flush();
  if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", path.string()));
}

}  // namespace detail

inline std::string coverage_chart_svg(const std::vector<MethodResult>& results) {
  return detail::line_chart_svg(detail::series_of(results, true), "Coverage vs target", "target coverage 1 - alpha",
                                "empirical coverage", true);
}

inline std::string size_chart_svg(const std::vector<MethodResult>& results) {
  return detail::line_chart_svg(detail::series_of(results, false), "Interval size vs coverage", "empirical coverage",
                                "mean interval width", false);
}

/// Writes results.csv, coverage.svg and size_coverage.svg into `out_dir`
/// (created if missing). Throws std::runtime_error on I/O failure.
inline void emit_report(const std::vector<MethodResult>& results, const std::filesystem::path& out_dir) {
  if (results.empty()) throw InputError("no results to report");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create '{}': {}", out_dir.string(), ec.message()));
  std::ostringstream csv;
  write_results_csv(csv, results);
  detail::write_file(out_dir / "results.csv", csv.str());
  detail::write_file(out_dir / "coverage.svg", coverage_chart_svg(results));
  detail::write_file(out_dir / "size_coverage.svg", size_chart_svg(results));
}

inline void emit_overlap_csv(const std::vector<OverlapRow>& rows, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error(fmt::format("cannot create '{}': {}", out_dir.string(), ec.message()));
  std::ostringstream csv;
  write_overlap_csv(csv, rows);
  detail::write_file(out_dir / "overlap.csv", csv.str());
}

}  // namespace cia
