#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "fedstlf/core/tensor.hpp"
#include "fedstlf/data/features.hpp"
#include "fedstlf/data/series.hpp"
#include "fedstlf/error.hpp"

namespace fedstlf {

inline constexpr std::size_t kLookBack = 24;

/// Row-major [rows, names.size()] feature matrix.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::size_t rows = 0;
  std::vector<double> values;

  std::size_t cols() const { return names.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * names.size() + c]; }
};

/// Feature layout shared by every model:
///   [load, sin_hour, cos_hour, sin_weekday, cos_weekday (, temp, rhum)].
inline std::vector<std::string> feature_names(std::size_t n_features) {
  if (n_features != 5 && n_features != 7) {
    throw ConfigError("feature set must have 5 or 7 features, got " + std::to_string(n_features));
  }
  std::vector<std::string> names{"load", "sin_hour", "cos_hour", "sin_weekday", "cos_weekday"};
  if (n_features == 7) {
    names.push_back("temp");
    names.push_back("rhum");
  }
  return names;
}

inline FeatureMatrix build_feature_matrix(const LoadSeries& s, std::size_t n_features) {
  FeatureMatrix m{feature_names(n_features), s.size(), {}};
  const std::vector<double>* temp = nullptr;
  const std::vector<double>* rhum = nullptr;
  if (n_features == 7) {
    temp = s.channel("temp");
    rhum = s.channel("rhum");
    if (!temp || !rhum) throw DataError(s.client_id + ": the 7-feature set needs 'temp' and 'rhum' channels");
  }
  m.values.reserve(m.rows * n_features);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const HourStamp t = s.timestamp(i);
    const auto [sh, ch] = cyclical_encode(hour_of_day(t), 24.0);
    const auto [sw, cw] = cyclical_encode(weekday(t), 7.0);
    m.values.insert(m.values.end(), {s.load[i], sh, ch, sw, cw});
    if (n_features == 7) m.values.insert(m.values.end(), {(*temp)[i], (*rhum)[i]});
  }
  return m;
}

enum class Partition { train, val, test };

inline const char* partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    case Partition::test: return "test";
  }
  return "?";
}

/// A contiguous run of windows with materialized tensors.
struct WindowBlock {
  std::size_t count = 0;
  Tensor inputs;                  // [count, look_back, F]
  Tensor targets;                 // [count, horizon]
  std::vector<std::size_t> starts;  // row index of each window's first input hour
};

/// Stride-1 supervised windows. Window i reads rows [i, i+look_back) and
/// predicts the load channel on rows [i+look_back, i+look_back+horizon).
struct WindowSet {
  std::size_t look_back = kLookBack;
  std::size_t horizon = 0;
  std::size_t n_features = 0;
  Tensor inputs;
  Tensor targets;
  std::vector<std::size_t> starts;
  std::vector<Partition> partition;

  std::size_t size() const { return starts.size(); }

  std::size_t count(Partition p) const {
    return static_cast<std::size_t>(std::count(partition.begin(), partition.end(), p));
  }

  WindowBlock select(Partition p) const {
    WindowBlock b;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
      if (partition[i] == p) idx.push_back(i);
    b.count = idx.size();
    if (idx.empty()) return b;
    const std::size_t in_stride = look_back * n_features;
    std::vector<double> x(idx.size() * in_stride), y(idx.size() * horizon);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::copy_n(inputs.data() + idx[k] * in_stride, in_stride, x.data() + k * in_stride);
      std::copy_n(targets.data() + idx[k] * horizon, horizon, y.data() + k * horizon);
      b.starts.push_back(starts[idx[k]]);
    }
    b.inputs = Tensor(Shape{idx.size(), look_back, n_features}, std::move(x));
    b.targets = Tensor(Shape{idx.size(), horizon}, std::move(y));
    return b;
  }
};

inline std::size_t window_count(std::size_t rows, std::size_t horizon, std::size_t look_back = kLookBack) {
  return rows >= look_back + horizon ? rows - look_back - horizon + 1 : 0;
}

/// Builds every stride-1 window; all windows start out tagged as train
/// until chronological_split assigns partitions. Targets come from column 0
/// (load).
inline WindowSet make_windows(const FeatureMatrix& m, std::size_t horizon, std::size_t look_back = kLookBack) {
  if (horizon == 0 || look_back == 0) throw ConfigError("look-back and horizon must be positive");
  if (m.rows < look_back + horizon) {
    throw DataError("series of " + std::to_string(m.rows) + " rows is too short for windows; need at least " +
                    std::to_string(look_back + horizon));
  }
  const std::size_t n = window_count(m.rows, horizon, look_back);
  const std::size_t f = m.cols();
  WindowSet w;
  w.look_back = look_back;
  w.horizon = horizon;
  w.n_features = f;
  std::vector<double> x(n * look_back * f), y(n * horizon);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(m.values.data() + i * f, look_back * f, x.data() + i * look_back * f);
    for (std::size_t h = 0; h < horizon; ++h) y[i * horizon + h] = m.at(i + look_back + h, 0);
    w.starts.push_back(i);
  }
  w.inputs = Tensor(Shape{n, look_back, f}, std::move(x));
  w.targets = Tensor(Shape{n, horizon}, std::move(y));
  w.partition.assign(n, Partition::train);
  return w;
}

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// 70/20/10 by window order, using integer arithmetic so counts are exact.
inline SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = n * 7 / 10;
  c.val = n * 9 / 10 - c.train;
  c.test = n - c.train - c.val;
  return c;
}

/// Tags windows train/val/test chronologically (never shuffled). A window
/// belongs to the partition its start falls in, so a boundary window whose
/// target range reaches past the boundary stays in the earlier partition.
inline void chronological_split(WindowSet& w) {
  if (w.size() < 10) throw DataError("need at least 10 windows to split, got " + std::to_string(w.size()));
  const SplitCounts c = split_counts(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.partition[i] = i < c.train ? Partition::train : i < c.train + c.val ? Partition::val : Partition::test;
  }
}

/// Everything one client contributes to training: scaled windows plus the
/// scaler needed to map predictions back to kW.
struct ClientDataset {
  std::string client_id;
  ScalerParams scaler;
  WindowSet windows;
  // Rows (hours) covered by training windows; scalers were fitted on them.
  std::size_t train_rows = 0;

  std::size_t train_count() const { return windows.count(Partition::train); }
};

/// Feature matrix -> scaler fitted on the training rows -> scaled windows ->
/// chronological split.
inline ClientDataset prepare_client(const LoadSeries& cleaned, std::size_t horizon, std::size_t n_features) {
  FeatureMatrix m = build_feature_matrix(cleaned, n_features);
  const std::size_t n = window_count(m.rows, horizon);
  if (n < 10) {
    throw DataError(cleaned.client_id + ": " + std::to_string(m.rows) + " rows give " + std::to_string(n) +
                    " windows; need at least " + std::to_string(kLookBack + horizon + 9) + " rows");
  }
  const SplitCounts counts = split_counts(n);
  ClientDataset d;
  d.client_id = cleaned.client_id;
  d.train_rows = counts.train - 1 + kLookBack + horizon;
  d.scaler = minmax_fit(m.names, m.values, d.train_rows);
  try {
    minmax_apply_rows(m.values, d.scaler);
  } catch (const DataError& e) {
    throw DataError(cleaned.client_id + ": " + e.what());
  }
  d.windows = make_windows(m, horizon);
  chronological_split(d.windows);
  return d;
}

/// Restricts training windows to those whose targets end within the first
/// `months` x 30 days; validation and test windows are untouched so metrics
/// stay comparable with the full-data run.
inline ClientDataset limited_data_view(const ClientDataset& d, std::size_t months) {
  const std::size_t limit_rows = months * 30 * 24;
  const WindowSet& w = d.windows;
  const std::size_t last_row = w.starts.empty() ? 0 : w.starts.back() + w.look_back + w.horizon;
  if (limit_rows >= last_row) return d;
  ClientDataset out = d;
  WindowSet& ow = out.windows;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const bool fits = w.starts[i] + w.look_back + w.horizon <= limit_rows;
    if (w.partition[i] != Partition::train || fits) keep.push_back(i);
  }
  const std::size_t train_kept = static_cast<std::size_t>(
      std::count_if(keep.begin(), keep.end(), [&](std::size_t i) { return w.partition[i] == Partition::train; }));
  if (train_kept == 0) {
    throw DataError(d.client_id + ": no training window fits in the first " + std::to_string(months) + " months");
  }
  const std::size_t in_stride = w.look_back * w.n_features;
  std::vector<double> x(keep.size() * in_stride), y(keep.size() * w.horizon);
  ow.starts.clear();
  ow.partition.clear();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    std::copy_n(w.inputs.data() + keep[k] * in_stride, in_stride, x.data() + k * in_stride);
    std::copy_n(w.targets.data() + keep[k] * w.horizon, w.horizon, y.data() + k * w.horizon);
    ow.starts.push_back(w.starts[keep[k]]);
    ow.partition.push_back(w.partition[keep[k]]);
  }
  ow.inputs = Tensor(Shape{keep.size(), w.look_back, w.n_features}, std::move(x));
  ow.targets = Tensor(Shape{keep.size(), w.horizon}, std::move(y));
  return out;
}

}  // namespace fedstlf
