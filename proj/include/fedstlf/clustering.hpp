#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedstlf/data/series.hpp"
#include "fedstlf/error.hpp"
#include "fedstlf/rng.hpp"

namespace fedstlf {

using Sequence = std::vector<double>;

inline constexpr std::size_t kHoursPerWeek = 168;
inline constexpr std::size_t kDefaultDtwBand = 24;

namespace detail {

inline void check_band(std::size_t n, std::size_t m, std::optional<std::size_t> band) {
  if (n == 0 || m == 0) throw DataError("dtw: empty sequence");
  const std::size_t diff = n > m ? n - m : m - n;
  if (band && *band < diff) {
    throw ConfigError("dtw: band " + std::to_string(*band) + " is narrower than the length difference " +
                      std::to_string(diff));
  }
}

inline bool in_band(std::size_t i, std::size_t j, std::optional<std::size_t> band) {
  return !band || (i > j ? i - j : j - i) <= *band;
}

// Full accumulated-cost matrix, (n+1) x (m+1) with an infinite border.
inline std::vector<double> dtw_matrix(std::span<const double> a, std::span<const double> b,
                                      std::optional<std::size_t> band) {
  const std::size_t n = a.size(), m = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d((n + 1) * (m + 1), inf);
  d[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (!in_band(i - 1, j - 1, band)) continue;
      const double best = std::min({d[(i - 1) * (m + 1) + j], d[i * (m + 1) + j - 1], d[(i - 1) * (m + 1) + j - 1]});
      d[i * (m + 1) + j] = std::abs(a[i - 1] - b[j - 1]) + best;
    }
  }
  return d;
}

}  // namespace detail

/// DTW with absolute-difference cost:
///   D(i,j) = |a_i - b_j| + min(D(i-1,j), D(i,j-1), D(i-1,j-1)).
/// `band` is an optional Sakoe-Chiba radius.
inline double dtw_distance(std::span<const double> a, std::span<const double> b,
                           std::optional<std::size_t> band = std::nullopt) {
  detail::check_band(a.size(), b.size(), band);
  const std::size_t m = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  // Two rolling rows.
  std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::fill(cur.begin(), cur.end(), inf);
    std::size_t lo = 1, hi = m;
    if (band) {
      lo = i > *band ? i - *band : 1;
      hi = std::min(m, i + *band);
    }
    for (std::size_t j = lo; j <= hi; ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = std::abs(a[i - 1] - b[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

/// Optimal warping path as (index in a, index in b) pairs from (0,0) to
/// (n-1,m-1). Ties prefer the diagonal step, then a step in a.
inline std::vector<std::pair<std::size_t, std::size_t>> dtw_path(std::span<const double> a, std::span<const double> b,
                                                                 std::optional<std::size_t> band = std::nullopt) {
  detail::check_band(a.size(), b.size(), band);
  const std::size_t n = a.size(), m = b.size();
  const auto d = detail::dtw_matrix(a, b, band);
  std::vector<std::pair<std::size_t, std::size_t>> path;
  std::size_t i = n, j = m;
  while (true) {
    path.emplace_back(i - 1, j - 1);
    if (i == 1 && j == 1) break;
    const double diag = d[(i - 1) * (m + 1) + j - 1];
    const double up = d[(i - 1) * (m + 1) + j];
    const double left = d[i * (m + 1) + j - 1];
    if (diag <= up && diag <= left) {
      --i;
      --j;
    } else if (up <= left) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(path.begin(), path.end());
  return path;
}

namespace detail {

// Median; an even count gives the midpoint of the two central values.
inline double median(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline double dtw_inertia(std::span<const Sequence> members, std::span<const double> centroid,
                          std::optional<std::size_t> band) {
  double total = 0.0;
  for (const auto& s : members) total += dtw_distance(s, centroid, band);
  return total;
}

/// DTW barycenter: align every member to the current barycenter and move
/// each barycenter point to the median of the values aligned to it. The
/// median is the exact minimiser of the absolute-difference cost for a
/// fixed alignment, so the summed DTW distance never increases.
inline Sequence dtw_barycenter(std::span<const Sequence> members, const Sequence& init, std::size_t iters,
                               std::optional<std::size_t> band = std::nullopt) {
  if (members.empty()) throw DataError("dtw barycenter: no members");
  if (iters == 0) throw ConfigError("dtw barycenter: need at least one iteration");
  if (init.empty()) throw DataError("dtw barycenter: empty initial sequence");
  Sequence center = init;
  std::vector<std::vector<double>> aligned(center.size());
  for (std::size_t it = 0; it < iters; ++it) {
    for (auto& a : aligned) a.clear();
    for (const auto& s : members) {
      for (auto [i, j] : dtw_path(s, center, band)) aligned[j].push_back(s[i]);
    }
    Sequence next(center.size());
    for (std::size_t j = 0; j < center.size(); ++j) next[j] = detail::median(aligned[j]);
    if (next == center) break;
    center = std::move(next);
  }
  return center;
}

struct ClusteringOptions {
  std::size_t k = 6;
  std::uint64_t seed = 0;
  std::size_t max_rounds = 20;
  std::size_t barycenter_iters = 10;
  std::optional<std::size_t> band = kDefaultDtwBand;
};

struct ClusterAssignment {
  std::size_t k = 0;
  std::vector<std::string> client_ids;
  std::vector<std::size_t> labels;  // parallel to client_ids
  std::vector<Sequence> centroids;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assign and update step
  std::size_t rounds = 0;

  std::size_t cluster_of(const std::string& id) const {
    for (std::size_t i = 0; i < client_ids.size(); ++i)
      if (client_ids[i] == id) return labels[i];
    throw DataError("client '" + id + "' has no cluster assignment");
  }

  std::vector<std::string> members(std::size_t c) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < client_ids.size(); ++i)
      if (labels[i] == c) out.push_back(client_ids[i]);
    return out;
  }
};

/// k-means under DTW: k-means++ seeding, then alternate nearest-centroid
/// assignment and barycenter updates until assignments settle or
/// `max_rounds` is reached. An emptied cluster takes the profile farthest
/// from its current centroid.
inline ClusterAssignment kmeans_dtw(const std::vector<std::pair<std::string, Sequence>>& profiles,
                                    const ClusteringOptions& opt) {
  const std::size_t n = profiles.size();
  if (opt.k == 0) throw ConfigError("k must be positive");
  if (n < opt.k) {
    throw ConfigError("k exceeds client count (k=" + std::to_string(opt.k) + ", clients=" + std::to_string(n) + ")");
  }
  std::vector<Sequence> seqs;
  ClusterAssignment out;
  out.k = opt.k;
  for (const auto& [id, s] : profiles) {
    if (s.empty()) throw DataError("client '" + id + "' has an empty clustering profile");
    out.client_ids.push_back(id);
    seqs.push_back(s);
  }
  auto dist = [&](const Sequence& a, const Sequence& b) { return dtw_distance(a, b, opt.band); };

  Rng rng(opt.seed);
  std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.below(n))};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < opt.k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dist(seqs[i], seqs[chosen.back()]));
      total += nearest[i] * nearest[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0.0) continue;
        pick = i;
        u -= nearest[i] * nearest[i];
        if (u < 0.0) break;
      }
    } else {
      for (std::size_t i = 0; i < n && pick == n; ++i)
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
    }
    chosen.push_back(pick);
  }
  for (std::size_t c : chosen) out.centroids.push_back(seqs[c]);

  out.labels.assign(n, 0);
  std::vector<double> to_center(n, 0.0);
  auto assign = [&]() {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < opt.k; ++c) {
        const double d = dist(seqs[i], out.centroids[c]);
        if (d < best) {
          best = d;
          out.labels[i] = c;
        }
      }
      to_center[i] = best;
    }
    // Refill empty clusters from the worst-fitting profile of a cluster
    // that can spare one.
    for (std::size_t c = 0; c < opt.k; ++c) {
      if (std::find(out.labels.begin(), out.labels.end(), c) != out.labels.end()) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        const auto size = std::count(out.labels.begin(), out.labels.end(), out.labels[i]);
        if (size > 1 && (far == n || to_center[i] > to_center[far])) far = i;
      }
      out.labels[far] = c;
      out.centroids[c] = seqs[far];
      to_center[far] = 0.0;
    }
    double total = 0.0;
    for (double d : to_center) total += d;
    return total;
  };

  std::vector<std::size_t> previous;
  for (std::size_t round = 0; round < std::max<std::size_t>(opt.max_rounds, 1); ++round) {
    out.inertia_history.push_back(assign());
    ++out.rounds;
    if (out.labels == previous) break;
    previous = out.labels;
    double total = 0.0;
    for (std::size_t c = 0; c < opt.k; ++c) {
      std::vector<Sequence> members;
      for (std::size_t i = 0; i < n; ++i)
        if (out.labels[i] == c) members.push_back(seqs[i]);
      out.centroids[c] = dtw_barycenter(members, out.centroids[c], opt.barycenter_iters, opt.band);
      total += dtw_inertia(members, out.centroids[c], opt.band);
    }
    out.inertia_history.push_back(total);
  }
  out.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) out.inertia += dist(seqs[i], out.centroids[out.labels[i]]);
  return out;
}

/// Mean weekly load profile (168 hour-of-week slots, Monday 00:00 first)
/// over the whole weeks inside the first `train_fraction` of the series,
/// min-max normalized. A flat profile maps to all zeros.
inline Sequence client_profile_for_clustering(const LoadSeries& s, double train_fraction = 0.7) {
  const auto train_hours = static_cast<std::size_t>(static_cast<double>(s.size()) * train_fraction);
  const std::size_t weeks = train_hours / kHoursPerWeek;
  if (weeks < 4) {
    throw DataError(s.client_id + ": clustering needs at least 4 full weeks of training data, got " +
                    std::to_string(weeks));
  }
  std::vector<double> sum(kHoursPerWeek, 0.0);
  std::vector<std::size_t> count(kHoursPerWeek, 0);
  for (std::size_t i = 0; i < weeks * kHoursPerWeek; ++i) {
    if (is_missing(s.load[i])) continue;
    const HourStamp t = s.timestamp(i);
    const std::size_t slot = static_cast<std::size_t>(weekday(t) * 24 + hour_of_day(t));
    sum[slot] += s.load[i];
    ++count[slot];
  }
  Sequence profile(kHoursPerWeek);
  for (std::size_t k = 0; k < kHoursPerWeek; ++k) {
    if (count[k] == 0) throw DataError(s.client_id + ": hour-of-week slot " + std::to_string(k) + " has no data");
    profile[k] = sum[k] / static_cast<double>(count[k]);
  }
  const auto [lo, hi] = std::minmax_element(profile.begin(), profile.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : profile) v = range > 0.0 ? (v - min) / range : 0.0;
  return profile;
}

/// Fraction of items whose cluster's majority label matches their own.
inline double cluster_purity(std::span<const std::size_t> labels, std::span<const std::size_t> truth) {
  if (labels.size() != truth.size() || labels.empty()) throw DataError("purity: label vectors must match and be non-empty");
  const std::size_t nc = *std::max_element(labels.begin(), labels.end()) + 1;
  const std::size_t nt = *std::max_element(truth.begin(), truth.end()) + 1;
  std::vector<std::size_t> table(nc * nt, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) ++table[labels[i] * nt + truth[i]];
  std::size_t hits = 0;
  for (std::size_t c = 0; c < nc; ++c)
    hits += *std::max_element(table.begin() + static_cast<std::ptrdiff_t>(c * nt),
                              table.begin() + static_cast<std::ptrdiff_t>((c + 1) * nt));
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline void write_assignment_csv(std::ostream& out, const ClusterAssignment& a) {
  out << "client_id,cluster\n";
  for (std::size_t i = 0; i < a.client_ids.size(); ++i) out << a.client_ids[i] << ',' << a.labels[i] << '\n';
}

inline void write_centroid_csv(std::ostream& out, const Sequence& centroid) {
  out << "hour_of_week,value\n";
  for (std::size_t i = 0; i < centroid.size(); ++i) out << i << ',' << detail::format_number(centroid[i]) << '\n';
}

/// Parses `client_id,cluster` rows back into an assignment without
/// centroids.
inline ClusterAssignment read_assignment_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("client_id,cluster", 0) != 0) {
    throw DataError("assignment file must start with 'client_id,cluster'");
  }
  ClusterAssignment a;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 2) throw DataError("assignment line " + std::to_string(lineno) + ": expected 2 fields");
    std::size_t label = 0;
    try {
      label = std::stoul(fields[1]);
    } catch (const std::exception&) {
      throw DataError("assignment line " + std::to_string(lineno) + ": bad cluster index '" + fields[1] + "'");
    }
    a.client_ids.push_back(fields[0]);
    a.labels.push_back(label);
    a.k = std::max(a.k, label + 1);
  }
  return a;
}

}  // namespace fedstlf
