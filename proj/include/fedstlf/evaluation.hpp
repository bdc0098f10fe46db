#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fedstlf/data/series.hpp"
#include "fedstlf/error.hpp"

namespace fedstlf {

inline constexpr double kMapeFloor = 1e-7;

namespace detail {

inline void check_pair(std::span<const double> pred, std::span<const double> actual, const char* what) {
  if (pred.size() != actual.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(actual.size()) + " actual values");
  }
  if (pred.empty()) throw DimensionError(std::string(what) + ": empty input");
}

}  // namespace detail

/// sqrt(mean((pred - actual)^2))
inline double rmse(std::span<const double> pred, std::span<const double> actual) {
  detail::check_pair(pred, actual, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - actual[i]) * (pred[i] - actual[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// mean(|pred - actual|)
inline double mae(std::span<const double> pred, std::span<const double> actual) {
  detail::check_pair(pred, actual, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - actual[i]);
  return s / static_cast<double>(pred.size());
}

/// 100 * mean(|actual - pred| / max(|actual|, floor)), in percent.
inline double mape(std::span<const double> pred, std::span<const double> actual, double floor = kMapeFloor) {
  detail::check_pair(pred, actual, "mape");
  if (!(floor > 0.0)) throw ConfigError("mape floor must be positive");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(actual[i] - pred[i]) / std::max(std::abs(actual[i]), floor);
  return 100.0 * s / static_cast<double>(pred.size());
}

struct Metrics {
  double rmse = 0.0, mae = 0.0, mape = 0.0;
};

inline Metrics compute_metrics(std::span<const double> pred, std::span<const double> actual,
                               double mape_floor = kMapeFloor) {
  return {rmse(pred, actual), mae(pred, actual), mape(pred, actual, mape_floor)};
}

/// Arithmetic mean of per-item metrics.
inline Metrics mean_metrics(std::span<const Metrics> items) {
  if (items.empty()) throw DataError("cannot average an empty metric list");
  Metrics m;
  for (const auto& x : items) {
    m.rmse += x.rmse;
    m.mae += x.mae;
    m.mape += x.mape;
  }
  const double n = static_cast<double>(items.size());
  return {m.rmse / n, m.mae / n, m.mape / n};
}

/// Test-set result of one client under one trained model.
struct ClientMetrics {
  std::string client_id;
  std::size_t cluster = 0;  // 0 outside the federated regime
  Metrics metrics;
  std::size_t n_test = 0;
  double seconds_per_epoch = 0.0;
};

/// Mean over clients of each cluster first, then over clusters.
inline Metrics cluster_mean_metrics(std::span<const ClientMetrics> clients) {
  if (clients.empty()) throw DataError("cannot average an empty client list");
  std::vector<std::size_t> ids;
  for (const auto& c : clients) ids.push_back(c.cluster);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<Metrics> per_cluster;
  for (std::size_t k : ids) {
    std::vector<Metrics> members;
    for (const auto& c : clients)
      if (c.cluster == k) members.push_back(c.metrics);
    per_cluster.push_back(mean_metrics(members));
  }
  return mean_metrics(per_cluster);
}

inline Metrics client_mean_metrics(std::span<const ClientMetrics> clients) {
  std::vector<Metrics> m;
  for (const auto& c : clients) m.push_back(c.metrics);
  return mean_metrics(m);
}

/// One row of the scenario report.
struct MetricRow {
  std::string regime;
  std::string model;
  std::size_t horizon = 0;
  std::size_t n_features = 0;
  double rmse = 0.0, mae = 0.0, mape = 0.0;
  double seconds_per_epoch = 0.0;
};

inline constexpr const char* kReportHeader = "regime,model,horizon,n_features,rmse,mae,mape,seconds_per_epoch";

namespace detail {

inline int regime_rank(const std::string& r) {
  if (r == "central") return 0;
  if (r == "local") return 1;
  if (r == "federated") return 2;
  return 3;
}

inline int model_rank(const std::string& m) {
  if (m == "transformer") return 0;
  if (m == "lstm") return 1;
  if (m == "cnn") return 2;
  return 3;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

// Shared by CSV and markdown so both carry the same digits.
inline std::string format_metric(double v) { return detail::fmt("%.10g", v); }
inline std::string format_seconds(double v) { return detail::fmt("%.4f", v); }

/// Regime, then horizon, then feature count, then model.
inline void sort_rows(std::vector<MetricRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    const auto ka = std::make_tuple(detail::regime_rank(a.regime), a.regime, a.horizon, a.n_features,
                                    detail::model_rank(a.model), a.model);
    const auto kb = std::make_tuple(detail::regime_rank(b.regime), b.regime, b.horizon, b.n_features,
                                    detail::model_rank(b.model), b.model);
    return ka < kb;
  });
}

enum class ReportFormat { markdown, csv };

inline std::string emit_report_csv(std::vector<MetricRow> rows, bool include_timing = true) {
  sort_rows(rows);
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    out << r.regime << ',' << r.model << ',' << r.horizon << ',' << r.n_features << ',' << format_metric(r.rmse) << ','
        << format_metric(r.mae) << ',' << format_metric(r.mape) << ','
        << (include_timing ? format_seconds(r.seconds_per_epoch) : std::string("-")) << '\n';
  }
  return out.str();
}

/// One table per regime with rows grouped by horizon then feature count.
/// With no rows, the three standard regimes are emitted as empty tables.
inline std::string emit_report_markdown(std::vector<MetricRow> rows) {
  sort_rows(rows);
  std::vector<std::string> regimes;
  for (const auto& r : rows)
    if (std::find(regimes.begin(), regimes.end(), r.regime) == regimes.end()) regimes.push_back(r.regime);
  if (regimes.empty()) regimes = {"central", "local", "federated"};
  std::ostringstream out;
  for (std::size_t i = 0; i < regimes.size(); ++i) {
    if (i) out << '\n';
    out << "## " << regimes[i] << "\n\n";
    out << "| Horizon | Features | Model | RMSE | MAE | MAPE | Time (s) |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
      if (r.regime != regimes[i]) continue;
      out << "| " << r.horizon << " | " << r.n_features << " | " << r.model << " | " << format_metric(r.rmse) << " | "
          << format_metric(r.mae) << " | " << format_metric(r.mape) << " | " << format_seconds(r.seconds_per_epoch)
          << " |\n";
    }
  }
  return out.str();
}

inline std::string emit_report(const std::vector<MetricRow>& rows, ReportFormat format) {
  return format == ReportFormat::csv ? emit_report_csv(rows) : emit_report_markdown(rows);
}

/// Reads rows written by emit_report_csv.
inline std::vector<MetricRow> parse_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw DataError(std::string("report must start with the header '") + kReportHeader + "'");
  }
  std::vector<MetricRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 8) throw DataError("report line " + std::to_string(lineno) + ": expected 8 fields");
    try {
      MetricRow r;
      r.regime = f[0];
      r.model = f[1];
      r.horizon = std::stoul(f[2]);
      r.n_features = std::stoul(f[3]);
      r.rmse = std::stod(f[4]);
      r.mae = std::stod(f[5]);
      r.mape = std::stod(f[6]);
      r.seconds_per_epoch = f[7] == "-" ? 0.0 : std::stod(f[7]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError("report line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

/// SVG line plot of two series over forecast hours, built from `line`,
/// `polyline` and `text` elements only. Output depends on the inputs alone.
inline std::string render_forecast_svg(const std::string& title, std::span<const double> actual,
                                       std::span<const double> predicted) {
  if (actual.empty()) throw DataError("forecast plot: empty series");
  if (actual.size() != predicted.size()) throw DimensionError("forecast plot: series lengths differ");
  const double width = 800, height = 320, left = 60, right = 20, top = 40, bottom = 50;
  double lo = actual[0], hi = actual[0];
  for (std::size_t i = 0; i < actual.size(); ++i) {
    lo = std::min({lo, actual[i], predicted[i]});
    hi = std::max({hi, actual[i], predicted[i]});
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pw = width - left - right, ph = height - top - bottom;
  const std::size_t n = actual.size();
  auto x_of = [&](std::size_t i) { return left + (n == 1 ? 0.0 : pw * static_cast<double>(i) / static_cast<double>(n - 1)); };
  auto y_of = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };
  auto num = [](double v) { return detail::fmt("%.2f", v); };
  auto poly = [&](std::span<const double> s) {
    std::string pts;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) pts += ' ';
      pts += num(x_of(i)) + ',' + num(y_of(s[i]));
    }
    return pts;
  };
  auto escape = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else if (c == '&') o += "&amp;";
      else o += c;
    }
    return o;
  };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
      << "\">\n";
  out << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << escape(title)
      << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  const std::size_t step = std::max<std::size_t>(1, n / 12);
  for (std::size_t i = 0; i < n; i += step) {
    out << "<text x=\"" << num(x_of(i)) << "\" y=\"" << num(top + ph + 18) << "\" font-family=\"sans-serif\" "
        << "font-size=\"10\" text-anchor=\"middle\">" << i << "</text>\n";
  }
  out << "<text x=\"" << num(left + pw / 2) << "\" y=\"" << num(height - 8)
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">hour</text>\n";
  out << "<text x=\"" << num(left - 6) << "\" y=\"" << num(top + 4) << "\" font-family=\"sans-serif\" "
      << "font-size=\"10\" text-anchor=\"end\">" << num(hi) << "</text>\n";
  out << "<text x=\"" << num(left - 6) << "\" y=\"" << num(top + ph) << "\" font-family=\"sans-serif\" "
      << "font-size=\"10\" text-anchor=\"end\">" << num(lo) << "</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" << poly(actual) << "\"/>\n";
  out << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"" << poly(predicted) << "\"/>\n";
  out << "<text x=\"" << num(left + pw - 150) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"11\" "
      << "fill=\"#1f77b4\">actual</text>\n";
  out << "<text x=\"" << num(left + pw - 80) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"11\" "
      << "fill=\"#d62728\">predicted</text>\n";
  out << "</svg>\n";
  return out.str();
}

inline void emit_forecast_plot(const std::string& client, std::span<const double> actual,
                               std::span<const double> predicted, const std::filesystem::path& path) {
  const std::string svg = render_forecast_svg(client, actual, predicted);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write plot " + path.string());
  out << svg;
  if (!out) throw Error("failed writing plot " + path.string());
}

}  // namespace fedstlf
