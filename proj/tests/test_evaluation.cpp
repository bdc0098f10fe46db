#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedstlf/evaluation.hpp"
#include "fedstlf/rng.hpp"

using namespace fedstlf;

namespace {

using V = std::vector<double>;

struct Oracle {
  long double rmse, mae, mape;
};

// Independent long-double loop.
Oracle oracle(const V& p, const V& a, long double floor) {
  long double sq = 0, ab = 0, pc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double d = static_cast<long double>(a[i]) - static_cast<long double>(p[i]);
    sq += d * d;
    ab += std::fabs(d);
    long double den = std::fabs(static_cast<long double>(a[i]));
    if (den < floor) den = floor;
    pc += std::fabs(d) / den;
  }
  const long double n = static_cast<long double>(p.size());
  return {std::sqrt(sq / n), ab / n, 100 * pc / n};
}

MetricRow row(std::string regime, std::string model, std::size_t h, std::size_t f, double base) {
  return {std::move(regime), std::move(model), h, f, base, base / 2, base * 1e6, 0.125};
}

std::vector<MetricRow> full_matrix() {
  std::vector<MetricRow> rows;
  double v = 0.1;
  for (const char* regime : {"federated", "local", "central"})
    for (const char* model : {"cnn", "lstm", "transformer"})
      for (std::size_t h : {24u, 12u})
        for (std::size_t f : {7u, 5u}) rows.push_back(row(regime, model, h, f, v += 0.01));
  return rows;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);)
    if (line.rfind(prefix, 0) == 0) ++n;
  return n;
}

}  // namespace

TEST(Metrics, WorkedExamples) {
  EXPECT_EQ(rmse(V{0, 2}, V{1, 1}), 1.0);
  EXPECT_EQ(mae(V{0, 2}, V{1, 1}), 1.0);
  EXPECT_NEAR(mape(V{1.1}, V{1.0}), 10.0, 1e-12);
  EXPECT_NEAR(mape(V{1.0}, V{0.0}, 1e-7), 1e9, 1e-3);
  const V x{0.3, 0.7, 1.9};
  EXPECT_EQ(rmse(x, x), 0.0);
  EXPECT_EQ(mae(x, x), 0.0);
  EXPECT_EQ(mape(x, x), 0.0);
}

TEST(Metrics, MatchLongDoubleOracle) {
  Rng rng(12);
  for (std::size_t n : {1u, 7u, 100u, 10000u}) {
    V p(n), a(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(-1.0, 2.0);
      a[i] = i % 97 == 0 ? 0.0 : rng.uniform(0.0, 1.0);
    }
    const Oracle o = oracle(p, a, 1e-7L);
    const Metrics m = compute_metrics(p, a, 1e-7);
    EXPECT_NEAR(m.rmse, static_cast<double>(o.rmse), 1e-12 * std::max(1.0, static_cast<double>(o.rmse)));
    EXPECT_NEAR(m.mae, static_cast<double>(o.mae), 1e-12 * std::max(1.0, static_cast<double>(o.mae)));
    EXPECT_NEAR(m.mape, static_cast<double>(o.mape), 1e-12 * std::max(1.0, static_cast<double>(o.mape)));
  }
}

TEST(Metrics, RmseDominatesMaeAndScaleEquivariance) {
  Rng rng(13);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.below(50);
    V p(n), a(n), ps(n), as(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(-5, 5);
      a[i] = rng.uniform(-5, 5);
      ps[i] = -3.0 * p[i];
      as[i] = -3.0 * a[i];
    }
    EXPECT_GE(rmse(p, a) * (1 + 1e-12), mae(p, a));
    EXPECT_NEAR(mae(ps, as), 3.0 * mae(p, a), 1e-12 * mae(ps, as));
  }
}

TEST(Metrics, ZeroOnlyWhenEqual) {
  const V a{0.5, 0.6, 0.7};
  V p = a;
  p[1] += 1e-9;
  EXPECT_GT(rmse(p, a), 0.0);
  EXPECT_GT(mae(p, a), 0.0);
  EXPECT_GT(mape(p, a), 0.0);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(rmse(V{1, 2}, V{1}), DimensionError);
  EXPECT_THROW(mae(V{}, V{}), DimensionError);
  EXPECT_THROW(mape(V{1}, V{1}, 0.0), ConfigError);
}

TEST(Metrics, MeanOverThreeClients) {
  std::vector<ClientMetrics> c(3);
  c[0].metrics = {1.0, 0.5, 10.0};
  c[1].metrics = {2.0, 1.5, 20.0};
  c[2].metrics = {4.0, 2.5, 60.0};
  c[0].cluster = 0;
  c[1].cluster = 0;
  c[2].cluster = 1;
  const Metrics m = client_mean_metrics(c);
  EXPECT_DOUBLE_EQ(m.rmse, 7.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.mae, 1.5);
  EXPECT_DOUBLE_EQ(m.mape, 30.0);
  const Metrics k = cluster_mean_metrics(c);
  EXPECT_DOUBLE_EQ(k.rmse, (1.5 + 4.0) / 2.0);
  EXPECT_DOUBLE_EQ(k.mape, (15.0 + 60.0) / 2.0);
  EXPECT_THROW(mean_metrics(std::vector<Metrics>{}), DataError);
}

TEST(Report, EmptyRowsGiveHeadersOnly) {
  const std::string md = emit_report({}, ReportFormat::markdown);
  EXPECT_EQ(count_lines_starting(md, "## "), 3u);
  EXPECT_EQ(count_lines_starting(md, "| Horizon"), 3u);
  EXPECT_EQ(count_lines_starting(md, "| 1"), 0u);
  EXPECT_EQ(emit_report({}, ReportFormat::csv), std::string(kReportHeader) + "\n");
}

TEST(Report, FullMatrixGivesThreeTablesOfTwelve) {
  const std::string md = emit_report(full_matrix(), ReportFormat::markdown);
  EXPECT_EQ(count_lines_starting(md, "## "), 3u);
  EXPECT_EQ(count_lines_starting(md, "| 12 |") + count_lines_starting(md, "| 24 |"), 36u);
  // Regime order central, local, federated; inside each, 12 before 24, 5 before 7.
  EXPECT_LT(md.find("## central"), md.find("## local"));
  EXPECT_LT(md.find("## local"), md.find("## federated"));
  const std::string csv = emit_report(full_matrix(), ReportFormat::csv);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("central,transformer,12,5,", 0), 0u) << line;
}

TEST(Report, CsvAndMarkdownCarryTheSameValues) {
  const auto rows = full_matrix();
  const std::string md = emit_report(rows, ReportFormat::markdown);
  const std::string csv = emit_report(rows, ReportFormat::csv);
  for (const auto& r : rows) {
    for (double v : {r.rmse, r.mae, r.mape}) {
      const std::string s = format_metric(v);
      EXPECT_NE(md.find(" " + s + " "), std::string::npos) << s;
      EXPECT_NE(csv.find("," + s + ","), std::string::npos) << s;
    }
  }
}

TEST(Report, CsvRoundTripIsDeterministic) {
  const std::string csv = emit_report(full_matrix(), ReportFormat::csv);
  std::istringstream in(csv);
  const auto parsed = parse_report_csv(in);
  ASSERT_EQ(parsed.size(), 36u);
  EXPECT_EQ(emit_report(parsed, ReportFormat::csv), csv);
  std::istringstream bad("regime,model\n");
  EXPECT_THROW(parse_report_csv(bad), DataError);
  std::istringstream broken(std::string(kReportHeader) + "\nlocal,cnn,x,5,1,1,1,1\n");
  EXPECT_THROW(parse_report_csv(broken), DataError);
}

TEST(Report, TimingCanBeMasked) {
  const std::string csv = emit_report_csv(full_matrix(), false);
  EXPECT_EQ(csv.find("0.1250"), std::string::npos);
  std::istringstream in(csv);
  EXPECT_EQ(parse_report_csv(in).size(), 36u);
}

TEST(Plot, DeterministicSvgWithTwoPolylines) {
  const V a{0.1, 0.4, 0.35, 0.8}, p{0.1, 0.4, 0.35, 0.8};
  const std::string svg = render_forecast_svg("client <a>", a, p);
  EXPECT_EQ(svg, render_forecast_svg("client <a>", a, p));
  EXPECT_EQ(count_lines_starting(svg, "<polyline"), 2u);
  const auto first = svg.find("points=\"");
  const auto second = svg.find("points=\"", first + 1);
  EXPECT_EQ(svg.substr(first, svg.find('"', first + 8) - first), svg.substr(second, svg.find('"', second + 8) - second));
  EXPECT_NE(svg.find("client &lt;a&gt;"), std::string::npos);
  for (const char* banned : {"<path", "<rect", "<circle"}) EXPECT_EQ(svg.find(banned), std::string::npos);

  const auto path = std::filesystem::temp_directory_path() / "fedstlf_test_plot.svg";
  emit_forecast_plot("c", a, p, path);
  std::ifstream in(path, std::ios::binary);
  const std::string disk((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(disk, render_forecast_svg("c", a, p));
  std::filesystem::remove(path);
}

TEST(Plot, Errors) {
  EXPECT_THROW(render_forecast_svg("x", V{}, V{}), DataError);
  EXPECT_THROW(render_forecast_svg("x", V{1}, V{1, 2}), DimensionError);
  EXPECT_THROW(emit_forecast_plot("x", V{1}, V{1}, "/nonexistent/dir/plot.svg"), Error);
}
