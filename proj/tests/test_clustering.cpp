#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "fedstlf/clustering.hpp"
#include "fedstlf/synthetic.hpp"

using namespace fedstlf;

namespace {

// Minimum cost over every monotone alignment path, enumerated by brute force.
double dtw_exhaustive(const Sequence& a, const Sequence& b) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
    acc = acc + std::abs(a[i] - b[j]);
    if (i + 1 == a.size() && j + 1 == b.size()) {
      best = std::min(best, acc);
      return;
    }
    if (i + 1 < a.size()) walk(i + 1, j, acc);
    if (j + 1 < b.size()) walk(i, j + 1, acc);
    if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

Sequence random_sequence(Rng& rng, std::size_t n) {
  Sequence s(n);
  for (double& v : s) v = rng.uniform(-3.0, 3.0);
  return s;
}

LoadSeries series_from(const std::vector<double>& load, std::string id = "c") {
  LoadSeries s;
  s.client_id = std::move(id);
  s.start = kSyntheticStart;
  s.load = load;
  return s;
}

}  // namespace

TEST(Dtw, WorkedExamples) {
  const Sequence x{1.5, -2.0, 4.0, 0.25};
  EXPECT_EQ(dtw_distance(x, x), 0.0);
  EXPECT_EQ(dtw_distance(Sequence{1, 2, 3}, Sequence{1, 2, 2, 3}), 0.0);
  EXPECT_EQ(dtw_distance(Sequence{0, 0}, Sequence{1, 1}), 2.0);
}

TEST(Dtw, MatchesExhaustivePathOracle) {
  Rng rng(31);
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::size_t m = 1; m <= 6; ++m) {
      for (int rep = 0; rep < 5; ++rep) {
        const Sequence a = random_sequence(rng, n), b = random_sequence(rng, m);
        EXPECT_EQ(dtw_distance(a, b), dtw_exhaustive(a, b)) << n << "x" << m;
      }
    }
  }
}

TEST(Dtw, SymmetricAndNonNegative) {
  Rng rng(32);
  for (int rep = 0; rep < 50; ++rep) {
    const Sequence a = random_sequence(rng, 1 + rng.below(30)), b = random_sequence(rng, 1 + rng.below(30));
    const double d = dtw_distance(a, b);
    EXPECT_GE(d, 0.0);
    EXPECT_EQ(d, dtw_distance(b, a));
    EXPECT_EQ(dtw_distance(a, a), 0.0);
  }
}

TEST(Dtw, WideBandEqualsUnbanded) {
  Rng rng(33);
  for (int rep = 0; rep < 30; ++rep) {
    const Sequence a = random_sequence(rng, 20 + rng.below(10)), b = random_sequence(rng, 20 + rng.below(10));
    EXPECT_EQ(dtw_distance(a, b, std::max(a.size(), b.size())), dtw_distance(a, b));
  }
}

TEST(Dtw, NarrowBandNeverBeatsUnbanded) {
  Rng rng(34);
  for (int rep = 0; rep < 30; ++rep) {
    const Sequence a = random_sequence(rng, 40), b = random_sequence(rng, 40);
    EXPECT_GE(dtw_distance(a, b, 3), dtw_distance(a, b));
  }
}

TEST(Dtw, Errors) {
  EXPECT_THROW(dtw_distance(Sequence{}, Sequence{1}), DataError);
  EXPECT_THROW(dtw_distance(Sequence{1, 2, 3, 4}, Sequence{1}, 2), ConfigError);
}

TEST(Dtw, PathCostEqualsDistance) {
  Rng rng(35);
  for (int rep = 0; rep < 20; ++rep) {
    const Sequence a = random_sequence(rng, 12), b = random_sequence(rng, 15);
    const auto path = dtw_path(a, b);
    ASSERT_EQ(path.front(), std::make_pair(std::size_t{0}, std::size_t{0}));
    ASSERT_EQ(path.back(), std::make_pair(a.size() - 1, b.size() - 1));
    double cost = 0.0;
    for (auto [i, j] : path) cost = cost + std::abs(a[i] - b[j]);
    EXPECT_NEAR(cost, dtw_distance(a, b), 1e-12);
  }
}

TEST(Barycenter, Examples) {
  const Sequence x{0.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(dtw_barycenter(std::vector<Sequence>{x}, Sequence(4, 0.0), 5), x);
  EXPECT_EQ(dtw_barycenter(std::vector<Sequence>{x, x}, x, 3), x);
  const std::vector<Sequence> flat{Sequence(6, 0.0), Sequence(6, 2.0)};
  EXPECT_EQ(dtw_barycenter(flat, Sequence(6, 0.5), 10), Sequence(6, 1.0));
}

TEST(Barycenter, InertiaNonIncreasing) {
  Rng rng(36);
  std::vector<Sequence> members;
  for (int i = 0; i < 5; ++i) members.push_back(random_sequence(rng, 24));
  Sequence c = members[0];
  double prev = dtw_inertia(members, c, std::nullopt);
  for (int it = 0; it < 6; ++it) {
    c = dtw_barycenter(members, c, 1);
    const double now = dtw_inertia(members, c, std::nullopt);
    EXPECT_LE(now, prev + 1e-12);
    prev = now;
  }
}

TEST(Barycenter, Errors) {
  EXPECT_THROW(dtw_barycenter(std::vector<Sequence>{}, Sequence{1}, 1), DataError);
  EXPECT_THROW(dtw_barycenter(std::vector<Sequence>{{1.0}}, Sequence{1}, 0), ConfigError);
}

TEST(KMeans, KEqualsNGivesSingletons) {
  Rng rng(40);
  std::vector<std::pair<std::string, Sequence>> p;
  for (int i = 0; i < 5; ++i) p.emplace_back("c" + std::to_string(i), random_sequence(rng, 30));
  ClusteringOptions opt;
  opt.k = 5;
  const ClusterAssignment a = kmeans_dtw(p, opt);
  EXPECT_EQ(a.inertia, 0.0);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(a.members(c).size(), 1u);
}

TEST(KMeans, TooFewClientsIsConfigError) {
  std::vector<std::pair<std::string, Sequence>> p{{"a", {1.0}}, {"b", {2.0}}};
  ClusteringOptions opt;
  opt.k = 3;
  try {
    kmeans_dtw(p, opt);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("k exceeds client count"), std::string::npos);
  }
}

TEST(KMeans, DeterministicAndInertiaNonIncreasing) {
  Rng rng(41);
  std::vector<std::pair<std::string, Sequence>> p;
  for (int i = 0; i < 12; ++i) p.emplace_back("c" + std::to_string(i), random_sequence(rng, 48));
  ClusteringOptions opt;
  opt.k = 3;
  opt.seed = 9;
  const ClusterAssignment a = kmeans_dtw(p, opt), b = kmeans_dtw(p, opt);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centroids, b.centroids);
  for (std::size_t i = 1; i < a.inertia_history.size(); ++i) {
    EXPECT_LE(a.inertia_history[i], a.inertia_history[i - 1] * (1 + 1e-12)) << "step " << i;
  }
  for (std::size_t c = 0; c < 3; ++c) EXPECT_FALSE(a.members(c).empty());
  EXPECT_EQ(a.client_ids.size(), 12u);
}

TEST(KMeans, RecoversTwoArchetypes) {
  const SyntheticFleet f = generate_fleet(12, 2208, 77);
  std::vector<std::pair<std::string, Sequence>> p;
  std::vector<std::size_t> truth;
  for (std::size_t i = 0; i < f.series.size(); ++i) {
    if (f.profiles[i].archetype == Archetype::workshop) continue;
    p.emplace_back(f.series[i].client_id, client_profile_for_clustering(f.series[i]));
    truth.push_back(f.profiles[i].archetype == Archetype::administrative ? 0 : 1);
  }
  ClusteringOptions opt;
  opt.k = 2;
  opt.seed = 5;
  const ClusterAssignment a = kmeans_dtw(p, opt);
  EXPECT_EQ(cluster_purity(a.labels, truth), 1.0);
}

TEST(Profile, PeriodicSeriesGivesOnePeriod) {
  std::vector<double> period(168);
  for (std::size_t k = 0; k < 168; ++k) period[k] = 10.0 + std::sin(static_cast<double>(k) * 0.1) + (k % 24 > 8 ? 3.0 : 0.0);
  std::vector<double> load;
  for (int w = 0; w < 8; ++w) load.insert(load.end(), period.begin(), period.end());
  const Sequence prof = client_profile_for_clustering(series_from(load));
  const auto [lo, hi] = std::minmax_element(period.begin(), period.end());
  ASSERT_EQ(prof.size(), 168u);
  for (std::size_t k = 0; k < 168; ++k) EXPECT_NEAR(prof[k], (period[k] - *lo) / (*hi - *lo), 1e-12);
}

TEST(Profile, ConstantSeriesGivesZeros) {
  EXPECT_EQ(client_profile_for_clustering(series_from(std::vector<double>(168 * 7, 4.2))), Sequence(168, 0.0));
}

TEST(Profile, ScaleInvariant) {
  const SyntheticFleet f = generate_fleet(1, 2208, 3);
  LoadSeries scaled = f.series[0];
  for (double& v : scaled.load) v *= 8.0;
  const Sequence a = client_profile_for_clustering(f.series[0]), b = client_profile_for_clustering(scaled);
  EXPECT_NEAR(dtw_distance(a, b), 0.0, 1e-9);
}

TEST(Profile, NeedsFourWeeks) {
  EXPECT_THROW(client_profile_for_clustering(series_from(std::vector<double>(168 * 5, 1.0))), DataError);
}

TEST(Assignment, CsvRoundTripAndPurity) {
  ClusterAssignment a;
  a.k = 2;
  a.client_ids = {"x", "y", "z"};
  a.labels = {1, 0, 1};
  std::stringstream ss;
  write_assignment_csv(ss, a);
  EXPECT_EQ(ss.str(), "client_id,cluster\nx,1\ny,0\nz,1\n");
  const ClusterAssignment b = read_assignment_csv(ss);
  EXPECT_EQ(b.client_ids, a.client_ids);
  EXPECT_EQ(b.labels, a.labels);
  EXPECT_EQ(b.cluster_of("z"), 1u);
  EXPECT_THROW(b.cluster_of("w"), DataError);
  std::istringstream bad("id,c\n");
  EXPECT_THROW(read_assignment_csv(bad), DataError);
  const std::vector<std::size_t> labels{0, 0, 1, 1}, truth{0, 1, 1, 1};
  EXPECT_EQ(cluster_purity(labels, truth), 0.75);
}
