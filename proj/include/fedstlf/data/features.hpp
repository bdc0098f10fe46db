#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedstlf/data/series.hpp"
#include "fedstlf/error.hpp"

namespace fedstlf {

/// Pearson product-moment correlation,
///   r = (n Sxy - Sx Sy) / sqrt((n Sxx - Sx^2)(n Syy - Sy^2)),
/// evaluated on samples shifted by their first value (r is shift
/// invariant; the shift keeps the sums well conditioned).
inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw DimensionError("pearson: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()) +
                         " differ");
  }
  if (x.size() < 2) throw DataError("pearson: need at least two samples");
  const double x0 = x[0], y0 = y[0];
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] - x0, b = y[i] - y0;
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  const double n = static_cast<double>(x.size());
  const double vx = n * sxx - sx * sx;
  const double vy = n * syy - sy * sy;
  if (!(vx > 0.0) || !(vy > 0.0)) throw DataError("pearson: correlation undefined for a constant input");
  const double r = (n * sxy - sx * sy) / std::sqrt(vx * vy);
  return std::clamp(r, -1.0, 1.0);
}

struct FeatureCorrelation {
  std::string name;
  bool calendar = false;
  bool defined = false;
  double r = 0.0;
};

struct FeatureSelection {
  std::vector<FeatureCorrelation> candidates;
  std::vector<std::string> selected_weather;
  std::vector<std::string> selected_calendar;
};

/// Numeric calendar attributes considered as candidate features.
inline double calendar_value(const std::string& name, HourStamp t) {
  if (name == "hour") return hour_of_day(t);
  if (name == "weekday") return weekday(t);
  const auto ymd = calendar_date(t);
  if (name == "month") return static_cast<unsigned>(ymd.month());
  if (name == "quarter") return (static_cast<unsigned>(ymd.month()) - 1) / 3 + 1;
  if (name == "year") return static_cast<int>(ymd.year());
  throw ConfigError("unknown calendar feature " + name);
}

inline const std::vector<std::string>& calendar_candidates() {
  static const std::vector<std::string> names{"hour", "weekday", "month", "quarter", "year"};
  return names;
}

/// Ranks every weather channel and calendar attribute by |r| against load
/// over the first `rows` readings (the training partition) and keeps the top
/// two of each kind. Candidates with undefined correlation are recorded and
/// skipped.
inline FeatureSelection select_features(const LoadSeries& s, std::size_t rows, std::size_t keep = 2) {
  rows = std::min(rows, s.size());
  const std::span<const double> load(s.load.data(), rows);
  FeatureSelection out;
  auto score = [&](FeatureCorrelation fc, std::span<const double> values) {
    try {
      fc.r = pearson_correlation(values, load);
      fc.defined = true;
    } catch (const DataError&) {
      fc.defined = false;
    }
    out.candidates.push_back(std::move(fc));
  };
  for (const auto& ch : s.weather) score({ch.name, false}, std::span<const double>(ch.values.data(), rows));
  std::vector<double> cal(rows);
  for (const auto& name : calendar_candidates()) {
    for (std::size_t i = 0; i < rows; ++i) cal[i] = calendar_value(name, s.timestamp(i));
    score({name, true}, cal);
  }

  auto pick = [&](bool calendar) {
    std::vector<const FeatureCorrelation*> pool;
    for (const auto& c : out.candidates)
      if (c.calendar == calendar && c.defined) pool.push_back(&c);
    std::stable_sort(pool.begin(), pool.end(),
                     [](const auto* a, const auto* b) { return std::abs(a->r) > std::abs(b->r); });
    std::vector<std::string> names;
    for (std::size_t i = 0; i < pool.size() && i < keep; ++i) names.push_back(pool[i]->name);
    return names;
  };
  out.selected_weather = pick(false);
  out.selected_calendar = pick(true);
  return out;
}

/// Maps a cyclical value onto the unit circle: (sin(2 pi t / P), cos(2 pi t / P)).
inline std::pair<double, double> cyclical_encode(double value, double period) {
  const double angle = 2.0 * std::numbers::pi * value / period;
  return {std::sin(angle), std::cos(angle)};
}

/// Per-feature min-max scaling parameters, fitted on training rows only.
struct ScalerParams {
  std::vector<std::string> names;
  std::vector<double> min;
  std::vector<double> max;

  std::size_t size() const { return names.size(); }
};

inline ScalerParams minmax_fit(const std::vector<std::string>& names, std::span<const double> rows_by_cols,
                               std::size_t rows) {
  const std::size_t cols = names.size();
  if (rows == 0 || rows * cols > rows_by_cols.size()) throw DataError("minmax_fit: no training rows");
  ScalerParams p{names, std::vector<double>(cols), std::vector<double>(cols)};
  for (std::size_t c = 0; c < cols; ++c) {
    double lo = rows_by_cols[c], hi = rows_by_cols[c];
    for (std::size_t r = 1; r < rows; ++r) {
      lo = std::min(lo, rows_by_cols[r * cols + c]);
      hi = std::max(hi, rows_by_cols[r * cols + c]);
    }
    p.min[c] = lo;
    p.max[c] = hi;
  }
  return p;
}

/// Single-feature fit.
inline ScalerParams minmax_fit(const std::string& name, std::span<const double> train) {
  return minmax_fit(std::vector<std::string>{name}, train, train.size());
}

inline double minmax_apply(double x, const ScalerParams& p, std::size_t feature = 0) {
  const double range = p.max[feature] - p.min[feature];
  if (!(range > 0.0)) {
    throw DataError("min-max scaler: feature '" + p.names[feature] + "' is constant on the training data");
  }
  return (x - p.min[feature]) / range;
}

inline double minmax_invert(double scaled, const ScalerParams& p, std::size_t feature = 0) {
  return scaled * (p.max[feature] - p.min[feature]) + p.min[feature];
}

/// Scales a row-major [rows, cols] matrix in place. No clipping: values
/// outside the training range map outside [0, 1].
inline void minmax_apply_rows(std::span<double> rows_by_cols, const ScalerParams& p) {
  const std::size_t cols = p.size();
  for (std::size_t c = 0; c < cols; ++c) {
    const double range = p.max[c] - p.min[c];
    if (!(range > 0.0)) {
      throw DataError("min-max scaler: feature '" + p.names[c] + "' is constant on the training data");
    }
    for (std::size_t i = c; i < rows_by_cols.size(); i += cols) rows_by_cols[i] = (rows_by_cols[i] - p.min[c]) / range;
  }
}

}  // namespace fedstlf
