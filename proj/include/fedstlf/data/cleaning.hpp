#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "fedstlf/data/series.hpp"
#include "fedstlf/error.hpp"

namespace fedstlf {

struct CleaningOptions {
  // Longest run of consecutive missing hours that is forward-filled.
  std::size_t max_fill_run = 6;
  // Larger missing fractions are refused rather than papered over. Judged
  // only once a series covers `min_rows_for_fraction` readings; on shorter
  // inputs a single gap would already exceed the limit.
  double max_missing_fraction = 0.25;
  std::size_t min_rows_for_fraction = 24;
  // Trailing window for the standard deviation of the deviation test.
  std::size_t deviation_window = 24;
  double deviation_sigmas = 2.0;
};

struct CleaningReport {
  std::string client_id;
  std::size_t filled_gaps = 0;
  std::size_t replaced_outliers = 0;
};

namespace detail {

inline double median_of_three(double a, double b, double c) {
  return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

inline void forward_fill(std::vector<double>& values, const std::string& what, const CleaningOptions& opt,
                         std::size_t* filled) {
  std::size_t run = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!is_missing(values[i])) {
      run = 0;
      continue;
    }
    if (i == 0) throw DataError(what + ": first reading is missing, nothing to fill from");
    if (++run > opt.max_fill_run) {
      throw DataError(what + ": more than " + std::to_string(opt.max_fill_run) +
                      " consecutive missing readings ending at index " + std::to_string(i));
    }
    values[i] = values[i - 1];
    if (filled) ++*filled;
  }
}

}  // namespace detail

/// Fills missing readings with the last non-null value and replaces
/// outliers with the median of the previous three cleaned readings. A
/// reading is an outlier when it is negative, or when it differs from the
/// previous cleaned reading by more than two standard deviations of the
/// trailing 24 cleaned readings (checked once 24 readings are available).
inline LoadSeries clean_series(const LoadSeries& s, CleaningReport* report = nullptr,
                               const CleaningOptions& opt = {}) {
  if (s.load.empty()) throw DataError(s.client_id + ": empty series");
  const std::size_t missing = s.missing_count();
  const bool judge_fraction = s.size() >= opt.min_rows_for_fraction;
  if (judge_fraction && static_cast<double>(missing) > opt.max_missing_fraction * static_cast<double>(s.size())) {
    throw DataError(s.client_id + ": " + std::to_string(missing) + " of " + std::to_string(s.size()) +
                    " readings missing, above the " + std::to_string(opt.max_missing_fraction * 100.0) + "% limit");
  }

  LoadSeries out = s;
  CleaningReport local{s.client_id, 0, 0};
  detail::forward_fill(out.load, s.client_id + " load", opt, &local.filled_gaps);
  for (auto& ch : out.weather) {
    if (judge_fraction && static_cast<double>(std::count_if(ch.values.begin(), ch.values.end(), is_missing)) >
                              opt.max_missing_fraction * static_cast<double>(ch.values.size())) {
      throw DataError(s.client_id + ": channel " + ch.name + " is mostly missing");
    }
    detail::forward_fill(ch.values, s.client_id + " " + ch.name, opt, nullptr);
  }

  std::vector<double>& x = out.load;
  const std::size_t w = opt.deviation_window;
  for (std::size_t t = 0; t < x.size(); ++t) {
    bool outlier = x[t] < 0.0;
    if (!outlier && t >= w && w > 0) {
      double mean = 0.0;
      for (std::size_t k = t - w; k < t; ++k) mean += x[k];
      mean /= static_cast<double>(w);
      double var = 0.0;
      for (std::size_t k = t - w; k < t; ++k) var += (x[k] - mean) * (x[k] - mean);
      const double sigma = std::sqrt(var / static_cast<double>(w));
      outlier = sigma > 0.0 && std::abs(x[t] - x[t - 1]) > opt.deviation_sigmas * sigma;
    }
    if (outlier) {
      if (t < 3) {
        throw DataError(s.client_id + ": outlier at index " + std::to_string(t) +
                        " before three valid readings are available");
      }
      x[t] = detail::median_of_three(x[t - 1], x[t - 2], x[t - 3]);
      ++local.replaced_outliers;
    }
  }
  if (report) *report = local;
  return out;
}

inline void write_cleaning_report(std::ostream& out, const std::vector<CleaningReport>& reports) {
  out << "client_id,filled_gaps,replaced_outliers\n";
  for (const auto& r : reports) out << r.client_id << ',' << r.filled_gaps << ',' << r.replaced_outliers << '\n';
}

}  // namespace fedstlf
