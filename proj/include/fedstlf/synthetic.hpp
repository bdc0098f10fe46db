#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "fedstlf/data/series.hpp"
#include "fedstlf/error.hpp"
#include "fedstlf/rng.hpp"

namespace fedstlf {

enum class Archetype { administrative, workshop, production };

inline const char* archetype_name(Archetype a) {
  switch (a) {
    case Archetype::administrative: return "administrative";
    case Archetype::workshop: return "workshop";
    case Archetype::production: return "production";
  }
  return "?";
}

/// Generator parameters for one synthetic building.
struct ClientProfile {
  std::string client_id;
  Archetype archetype = Archetype::administrative;
  double base_load = 50.0;        // kW
  double daily_amplitude = 0.0;   // kW
  double weekly_amplitude = 0.0;  // kW
  double noise_std = 0.0;         // kW
  double temperature_coupling = 0.0;  // kW per degree C above the reference
  std::uint64_t seed = 0;
};

inline constexpr HourStamp kSyntheticStart = 429'672;  // 2019-01-07T00:00, a Monday
inline constexpr double kReferenceTemperature = 12.0;

namespace detail {

inline double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Relative intra-week load shape in [0, 1]. Ramps span several hours so
// hour-to-hour steps stay well inside the cleaner's deviation band.
inline double archetype_shape(Archetype a, int hour, int wd) {
  const double h = hour;
  switch (a) {
    case Archetype::administrative: {
      // Office hours 7-19 on weekdays, a faint echo at weekends.
      const double bump = (h >= 7 && h <= 19) ? 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (h - 7.0) / 12.0)) : 0.0;
      return wd < 5 ? bump : 0.3 * bump;
    }
    case Archetype::workshop: {
      // Two shifts 6-22, Monday to Saturday.
      const double plateau = smoothstep(3.0, 8.0, h) * (1.0 - smoothstep(20.0, 25.0, h));
      return wd < 6 ? plateau : 0.2 * plateau;
    }
    case Archetype::production:
      return 0.0;
  }
  return 0.0;
}

}  // namespace detail

/// Fleet-wide campus weather: air temperature (seasonal + diurnal + AR(1)
/// noise), relative humidity anti-correlated with temperature, and a
/// pressure channel that is unrelated to load.
struct CampusWeather {
  std::vector<double> temp, rhum, pres;
};

inline CampusWeather generate_weather(HourStamp start, std::size_t n_hours, std::uint64_t seed) {
  Rng rng(seed);
  CampusWeather w;
  w.temp.resize(n_hours);
  w.rhum.resize(n_hours);
  w.pres.resize(n_hours);
  double temp_noise = 0.0, rhum_noise = 0.0, pres_noise = 0.0;
  for (std::size_t i = 0; i < n_hours; ++i) {
    const HourStamp t = start + static_cast<HourStamp>(i);
    const auto ymd = calendar_date(t);
    const auto jan1 = std::chrono::sys_days{ymd.year() / std::chrono::January / 1};
    const double doy = static_cast<double>((std::chrono::sys_days{ymd} - jan1).count());
    const double hour = hour_of_day(t);
    temp_noise = 0.95 * temp_noise + rng.normal(0.0, 0.4);
    rhum_noise = 0.9 * rhum_noise + rng.normal(0.0, 1.5);
    pres_noise = 0.98 * pres_noise + rng.normal(0.0, 0.6);
    const double seasonal = 10.0 - 9.0 * std::cos(2.0 * std::numbers::pi * (doy - 15.0) / 365.25);
    const double diurnal = 4.0 * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0);
    w.temp[i] = seasonal + diurnal + temp_noise;
    w.rhum[i] = std::clamp(75.0 - 2.0 * (diurnal + temp_noise) - 0.5 * (seasonal - 10.0) + rhum_noise, 15.0, 100.0);
    w.pres[i] = 1013.0 + pres_noise;
  }
  return w;
}

/// One building's hourly load on top of shared weather:
///   base + daily sinusoid + weekly modulation + archetype shape
///   + temperature coupling + Gaussian noise, clipped at zero.
inline LoadSeries generate_series(const ClientProfile& p, HourStamp start, const CampusWeather& weather) {
  if (!(p.base_load > 0.0)) throw ConfigError(p.client_id + ": base load must be positive");
  if (p.noise_std < 0.0) throw ConfigError(p.client_id + ": noise std must be non-negative");
  const std::size_t n = weather.temp.size();
  Rng rng(p.seed);
  LoadSeries s;
  s.client_id = p.client_id;
  s.start = start;
  s.load.resize(n);
  Channel temp{"temp", std::vector<double>(n)}, rhum{"rhum", std::vector<double>(n)}, pres{"pres", std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    // Per-client sensor jitter around the campus weather.
    temp.values[i] = weather.temp[i] + rng.normal(0.0, 0.2);
    rhum.values[i] = std::clamp(weather.rhum[i] + rng.normal(0.0, 1.0), 0.0, 100.0);
    pres.values[i] = weather.pres[i] + rng.normal(0.0, 0.1);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const HourStamp t = start + static_cast<HourStamp>(i);
    const int hour = hour_of_day(t);
    const int wd = weekday(t);
    const double daily = 0.5 * std::sin(2.0 * std::numbers::pi * (hour - 8.0) / 24.0);
    const double shape = detail::archetype_shape(p.archetype, hour, wd);
    const double week_phase = static_cast<double>(wd * 24 + hour) / 168.0;
    const double weekly = std::cos(2.0 * std::numbers::pi * week_phase);
    double v = p.base_load + p.daily_amplitude * (daily + shape) + p.weekly_amplitude * weekly +
               p.temperature_coupling * (weather.temp[i] - kReferenceTemperature);
    if (p.noise_std > 0.0) v += rng.normal(0.0, p.noise_std);
    s.load[i] = std::max(v, 0.0);
  }
  s.weather = {std::move(temp), std::move(rhum), std::move(pres)};
  return s;
}

/// Draws a plausible profile for an archetype. Magnitudes are placeholders
/// spanning roughly 5-500 kW, not measured campus values.
inline ClientProfile sample_profile(std::string client_id, Archetype a, std::uint64_t seed) {
  Rng rng(seed);
  ClientProfile p;
  p.client_id = std::move(client_id);
  p.archetype = a;
  p.seed = derive_seed(seed, "noise");
  switch (a) {
    case Archetype::administrative:
      p.base_load = rng.uniform(20.0, 120.0);
      p.daily_amplitude = p.base_load * rng.uniform(0.5, 0.7);
      p.weekly_amplitude = p.base_load * 0.04;
      p.noise_std = p.base_load * rng.uniform(0.02, 0.04);
      p.temperature_coupling = -p.base_load * 0.004;
      break;
    case Archetype::workshop:
      p.base_load = rng.uniform(5.0, 60.0);
      p.daily_amplitude = p.base_load * rng.uniform(0.6, 0.9);
      p.weekly_amplitude = p.base_load * 0.03;
      p.noise_std = p.base_load * rng.uniform(0.02, 0.05);
      p.temperature_coupling = -p.base_load * 0.003;
      break;
    case Archetype::production:
      p.base_load = rng.uniform(150.0, 500.0);
      p.daily_amplitude = p.base_load * rng.uniform(0.12, 0.18);
      p.weekly_amplitude = p.base_load * 0.01;
      p.noise_std = p.base_load * rng.uniform(0.01, 0.02);
      p.temperature_coupling = p.base_load * 0.001;
      break;
  }
  return p;
}

struct SyntheticFleet {
  std::vector<ClientProfile> profiles;
  std::vector<LoadSeries> series;
};

/// Archetypes are assigned round-robin so any fleet of two or more clients
/// mixes building types. Fully determined by `master_seed`.
inline SyntheticFleet generate_fleet(std::size_t n_clients, std::size_t n_hours, std::uint64_t master_seed,
                                     HourStamp start = kSyntheticStart) {
  if (n_clients == 0) throw ConfigError("fleet needs at least one client");
  if (n_hours < 24 * 7 * 4) throw ConfigError("fleet needs at least four weeks of hours");
  static constexpr Archetype kOrder[] = {Archetype::administrative, Archetype::workshop, Archetype::production};
  const CampusWeather weather = generate_weather(start, n_hours, derive_seed(master_seed, "weather"));
  SyntheticFleet fleet;
  for (std::size_t i = 0; i < n_clients; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "client_%02zu", i);
    const std::uint64_t seed = derive_seed(master_seed, id);
    fleet.profiles.push_back(sample_profile(id, kOrder[i % 3], seed));
    fleet.series.push_back(generate_series(fleet.profiles.back(), start, weather));
  }
  return fleet;
}

struct Corruption {
  std::vector<std::size_t> gaps;
  std::vector<std::size_t> outliers;
};

/// Knocks out single hours and plants negative readings or spikes. The
/// first day is left intact so the cleaner always has history to work with.
inline LoadSeries inject_gaps_and_outliers(const LoadSeries& s, double gap_rate, double outlier_rate,
                                           std::uint64_t seed, Corruption* log = nullptr) {
  if (gap_rate < 0.0 || gap_rate > 0.05 || outlier_rate < 0.0 || outlier_rate > 0.05) {
    throw ConfigError("corruption rates must lie in [0, 0.05]");
  }
  LoadSeries out = s;
  Rng rng(seed);
  Corruption local;
  for (std::size_t i = 24; i < out.size(); ++i) {
    const double u = rng.uniform();
    const double kind = rng.uniform();
    if (u < gap_rate) {
      out.load[i] = kMissing;
      local.gaps.push_back(i);
    } else if (u < gap_rate + outlier_rate) {
      double mean = 0.0, var = 0.0;
      for (std::size_t k = i - 24; k < i; ++k) mean += s.load[k];
      mean /= 24.0;
      for (std::size_t k = i - 24; k < i; ++k) var += (s.load[k] - mean) * (s.load[k] - mean);
      const double sigma = std::sqrt(var / 24.0);
      out.load[i] = kind < 0.5 ? -std::max(1.0, 0.1 * mean) : s.load[i] + 6.0 * sigma + 1.0;
      local.outliers.push_back(i);
    }
  }
  if (log) *log = std::move(local);
  return out;
}

}  // namespace fedstlf
