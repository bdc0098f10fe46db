#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <locale>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedstlf/error.hpp"

namespace fedstlf {

/// Hours since 1970-01-01T00:00Z.
using HourStamp = std::int64_t;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

/// Parses "YYYY-MM-DDTHH[:MM[:SS]]" with an optional trailing "Z"; a space
/// may replace the "T". Only whole hours are accepted.
inline std::optional<HourStamp> parse_timestamp(std::string_view text) {
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  auto digits = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    if (pos + len > text.size()) return std::nullopt;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (text[i] < '0' || text[i] > '9') return std::nullopt;
      v = v * 10 + (text[i] - '0');
    }
    return v;
  };
  if (text.size() != 13 && text.size() != 16 && text.size() != 19) return std::nullopt;
  if (text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ')) return std::nullopt;
  const auto y = digits(0, 4), mo = digits(5, 2), d = digits(8, 2), h = digits(11, 2);
  if (!y || !mo || !d || !h || *h > 23) return std::nullopt;
  for (std::size_t pos = 13; pos < text.size(); pos += 3) {
    const auto part = digits(pos + 1, 2);
    if (text[pos] != ':' || !part || *part != 0) return std::nullopt;
  }
  const std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*mo)},
                                        std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<HourStamp>(days) * 24 + *h;
}

inline std::string format_timestamp(HourStamp stamp) {
  const auto days = static_cast<int>(stamp >= 0 ? stamp / 24 : (stamp - 23) / 24);
  const int hour = static_cast<int>(stamp - static_cast<HourStamp>(days) * 24);
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char out[32];
  std::snprintf(out, sizeof out, "%04d-%02u-%02uT%02d:00:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hour);
  return out;
}

inline int hour_of_day(HourStamp stamp) { return static_cast<int>(((stamp % 24) + 24) % 24); }

/// Monday = 0 ... Sunday = 6.
inline int weekday(HourStamp stamp) {
  const std::int64_t days = stamp >= 0 ? stamp / 24 : (stamp - 23) / 24;
  // 1970-01-01 was a Thursday.
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

inline std::chrono::year_month_day calendar_date(HourStamp stamp) {
  const auto days = static_cast<int>(stamp >= 0 ? stamp / 24 : (stamp - 23) / 24);
  return std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{days}}};
}

struct Channel {
  std::string name;
  std::vector<double> values;
};

/// One client's hourly load with aligned weather channels. Timestamps are
/// implicit: reading i was taken at start + i hours. NaN marks a missing
/// reading until the series is cleaned.
struct LoadSeries {
  std::string client_id;
  HourStamp start = 0;
  std::vector<double> load;
  std::vector<Channel> weather;

  std::size_t size() const { return load.size(); }
  HourStamp timestamp(std::size_t i) const { return start + static_cast<HourStamp>(i); }

  const std::vector<double>* channel(std::string_view name) const {
    for (const auto& c : weather)
      if (c.name == name) return &c.values;
    return nullptr;
  }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (double v : load) n += is_missing(v) ? 1 : 0;
    return n;
  }

  bool operator==(const LoadSeries& o) const {
    auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (is_missing(a[i]) != is_missing(b[i])) return false;
        if (!is_missing(a[i]) && a[i] != b[i]) return false;
      }
      return true;
    };
    if (client_id != o.client_id || start != o.start || !same(load, o.load)) return false;
    if (weather.size() != o.weather.size()) return false;
    for (std::size_t i = 0; i < weather.size(); ++i)
      if (weather[i].name != o.weather[i].name || !same(weather[i].values, o.weather[i].values)) return false;
    return true;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline std::optional<double> parse_number(const std::string& text) {
  if (text.empty() || text == "NaN" || text == "nan" || text == "NA") return kMissing;
  std::istringstream in(text);
  in.imbue(std::locale::classic());
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof()) return std::nullopt;
  return v;
}

inline std::string format_number(double v) {
  if (is_missing(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads `timestamp,load[,channel...]`. Hours absent from the file become
/// missing markers; duplicated or decreasing timestamps are rejected.
inline LoadSeries read_meter_csv(std::istream& in, std::string client_id) {
  std::string line;
  if (!std::getline(in, line)) throw DataError(client_id + ": empty meter file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "timestamp" || header[1] != "load") {
    throw DataError(client_id + ": header must start with 'timestamp,load', got '" + line + "'");
  }
  LoadSeries s;
  s.client_id = std::move(client_id);
  for (std::size_t c = 2; c < header.size(); ++c) s.weather.push_back({header[c], {}});

  std::optional<HourStamp> last;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw DataError(s.client_id + ": line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                      " fields, expected " + std::to_string(header.size()));
    }
    const auto stamp = parse_timestamp(fields[0]);
    if (!stamp) {
      throw DataError(s.client_id + ": line " + std::to_string(line_no) + ": unparseable timestamp '" + fields[0] +
                      "'");
    }
    if (last && *stamp <= *last) {
      throw DataError(s.client_id + ": line " + std::to_string(line_no) + ": timestamp " + format_timestamp(*stamp) +
                      (*stamp == *last ? " is duplicated" : " goes backwards"));
    }
    if (!last) {
      s.start = *stamp;
    } else {
      // Hours skipped by the file become missing markers.
      for (HourStamp h = *last + 1; h < *stamp; ++h) {
        s.load.push_back(kMissing);
        for (auto& ch : s.weather) ch.values.push_back(kMissing);
      }
    }
    std::vector<double> row(fields.size() - 1);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      const auto v = detail::parse_number(fields[c]);
      if (!v) {
        throw DataError(s.client_id + ": line " + std::to_string(line_no) + ": cannot parse '" + fields[c] +
                        "' in column " + header[c]);
      }
      row[c - 1] = *v;
    }
    s.load.push_back(row[0]);
    for (std::size_t c = 0; c < s.weather.size(); ++c) s.weather[c].values.push_back(row[c + 1]);
    last = stamp;
  }
  if (s.load.empty()) throw DataError(s.client_id + ": meter file has no readings");
  return s;
}

inline LoadSeries load_meter_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open meter file " + path.string());
  return read_meter_csv(in, path.stem().string());
}

inline void write_meter_csv(std::ostream& out, const LoadSeries& s) {
  out << "timestamp,load";
  for (const auto& c : s.weather) out << ',' << c.name;
  out << '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << format_timestamp(s.timestamp(i)) << ',' << detail::format_number(s.load[i]);
    for (const auto& c : s.weather) out << ',' << detail::format_number(c.values[i]);
    out << '\n';
  }
}

inline void save_meter_csv(const std::filesystem::path& path, const LoadSeries& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write meter file " + path.string());
  write_meter_csv(out, s);
}

}  // namespace fedstlf
