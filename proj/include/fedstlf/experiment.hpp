#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedstlf/clustering.hpp"
#include "fedstlf/data/cleaning.hpp"
#include "fedstlf/data/features.hpp"
#include "fedstlf/data/series.hpp"
#include "fedstlf/data/windows.hpp"
#include "fedstlf/error.hpp"
#include "fedstlf/evaluation.hpp"
#include "fedstlf/federated/federated.hpp"
#include "fedstlf/models/models.hpp"
#include "fedstlf/synthetic.hpp"

namespace fedstlf {

/// Flat key -> value configuration; ordered so emitted manifests are stable.
using RawConfig = std::map<std::string, std::string>;

inline constexpr const char* kOutputDirEnv = "FEDSTLF_OUTPUT_DIR";

struct ExperimentConfig {
  std::string preset = "desk";
  std::string data_source = "generate";  // generate | csv
  std::string data_dir;
  std::size_t n_clients = 8;
  std::size_t n_hours = 2208;
  double gap_rate = 0.0;
  double outlier_rate = 0.0;
  std::size_t k = 3;
  std::vector<Regime> regimes{Regime::central, Regime::local, Regime::federated};
  std::vector<ModelKind> models{ModelKind::transformer, ModelKind::lstm, ModelKind::cnn};
  std::vector<std::size_t> horizons{12, 24};
  std::vector<std::size_t> feature_sets{5, 7};
  std::size_t n_epoch = 20;
  std::size_t n_round = 2;
  std::size_t epochs = 100;
  bool early_stopping = true;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t limited_months = 0;  // 0: use all training data
  std::uint64_t seed = 0;
  std::string output_dir = "fedstlf_out";
  Aggregation aggregation = Aggregation::data_weighted;
  TransportKind transport = TransportKind::in_process;
  std::string model_width = "paper";  // paper | reduced
  double mape_floor = kMapeFloor;
  std::size_t dtw_band = kDefaultDtwBand;
  std::size_t cluster_rounds = 20;
  bool plots = true;
};

/// Every key with its preset value. `seed` is deliberately absent: a run
/// must name its seed explicitly.
inline RawConfig preset_defaults(const std::string& preset) {
  RawConfig c{
      {"preset", preset},
      {"data_source", "generate"},
      {"data_dir", ""},
      {"gap_rate", "0.005"},
      {"outlier_rate", "0.002"},
      {"regimes", "central,local,federated"},
      {"models", "transformer,lstm,cnn"},
      {"horizons", "12,24"},
      {"feature_sets", "5,7"},
      {"early_stopping", "true"},
      {"patience", "10"},
      {"batch_size", "32"},
      {"learning_rate", "0.001"},
      {"limited_months", "0"},
      {"output_dir", "fedstlf_out"},
      {"aggregation", "data_weighted"},
      {"transport", "in_process"},
      {"model_width", "paper"},
      {"mape_floor", "1e-07"},
      {"dtw_band", "24"},
      {"cluster_rounds", "20"},
      {"plots", "true"},
  };
  if (preset == "desk") {
    // Small enough to run the full 36-scenario matrix on one core in
    // well under half an hour.
    c["n_clients"] = "8";
    c["n_hours"] = "2208";
    c["k"] = "3";
    c["epochs"] = "2";
    c["n_epoch"] = "1";
    c["n_round"] = "2";
  } else if (preset == "paper") {
    // Two years of hourly data for 33 buildings; long-running.
    c["n_clients"] = "33";
    c["n_hours"] = "17520";
    c["k"] = "6";
    c["epochs"] = "100";
    c["n_epoch"] = "20";
    c["n_round"] = "2";
  } else {
    throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
  }
  return c;
}

/// Parses `key = value` lines; '#' starts a comment.
inline RawConfig parse_config_text(std::istream& in) {
  RawConfig raw;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    raw[key] = trim(line.substr(eq + 1));
  }
  return raw;
}

inline RawConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  return parse_config_text(in);
}

/// Splits a `key=value` override.
inline std::pair<std::string, std::string> parse_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not key=value");
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

/// Preset defaults, then the file, then overrides. The preset itself may be
/// chosen by the file or an override.
inline RawConfig merge_config(const RawConfig& file, const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::string preset = "desk";
  if (auto it = file.find("preset"); it != file.end()) preset = it->second;
  for (const auto& [k, v] : overrides)
    if (k == "preset") preset = v;
  RawConfig merged = preset_defaults(preset);
  for (const auto& [k, v] : file) merged[k] = v;
  for (const auto& [k, v] : overrides) merged[k] = v;
  return merged;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      const auto b = cur.find_first_not_of(' ');
      if (b != std::string::npos) out.push_back(cur.substr(b, cur.find_last_not_of(' ') - b + 1));
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

// Collects every violation instead of stopping at the first.
class ConfigReader {
 public:
  explicit ConfigReader(const RawConfig& raw) : raw_(raw) {}

  std::vector<std::string> errors;

  const std::string* get(const std::string& key) {
    const auto it = raw_.find(key);
    if (it == raw_.end()) {
      errors.push_back(key + ": missing");
      return nullptr;
    }
    used_.push_back(key);
    return &it->second;
  }

  void text(const std::string& key, std::string& out) {
    if (const auto* v = get(key)) out = *v;
  }

  void size(const std::string& key, std::size_t& out) {
    const auto* v = get(key);
    if (!v) return;
    try {
      std::size_t pos = 0;
      if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
      const auto x = std::stoull(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("trailing");
      out = static_cast<std::size_t>(x);
    } catch (const std::exception&) {
      errors.push_back(key + ": '" + *v + "' is not a non-negative integer");
    }
  }

  void u64(const std::string& key, std::uint64_t& out) {
    std::size_t x = out;
    size(key, x);
    out = x;
  }

  void real(const std::string& key, double& out) {
    const auto* v = get(key);
    if (!v) return;
    try {
      std::size_t pos = 0;
      out = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      errors.push_back(key + ": '" + *v + "' is not a number");
    }
  }

  void boolean(const std::string& key, bool& out) {
    const auto* v = get(key);
    if (!v) return;
    if (*v == "true" || *v == "1" || *v == "yes") out = true;
    else if (*v == "false" || *v == "0" || *v == "no") out = false;
    else errors.push_back(key + ": '" + *v + "' is not a boolean");
  }

  template <class T, class Parse>
  void list(const std::string& key, std::vector<T>& out, Parse parse) {
    const auto* v = get(key);
    if (!v) return;
    out.clear();
    bool bad = false;
    for (const auto& item : split_list(*v)) {
      try {
        const T x = parse(item);
        if (std::find(out.begin(), out.end(), x) == out.end()) out.push_back(x);
      } catch (const std::exception& e) {
        errors.push_back(key + ": " + e.what());
        bad = true;
      }
    }
    if (out.empty() && !bad) errors.push_back(key + ": list is empty");
  }

  void unknown_keys() {
    for (const auto& [k, v] : raw_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) errors.push_back(k + ": unknown key");
  }

 private:
  const RawConfig& raw_;
  std::vector<std::string> used_;
};

inline std::string join_list(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + items[i];
  return s;
}

inline std::string number_text(double v) { return detail::format_number(v); }

}  // namespace detail

/// Parses and cross-checks a merged configuration. Throws one ConfigError
/// listing every violation, one per line.
inline ExperimentConfig validate_config(const RawConfig& raw) {
  ExperimentConfig c;
  detail::ConfigReader r(raw);
  r.text("preset", c.preset);
  r.text("data_source", c.data_source);
  r.text("data_dir", c.data_dir);
  r.size("n_clients", c.n_clients);
  r.size("n_hours", c.n_hours);
  r.real("gap_rate", c.gap_rate);
  r.real("outlier_rate", c.outlier_rate);
  r.size("k", c.k);
  r.list("regimes", c.regimes, [](const std::string& s) { return parse_regime(s); });
  r.list("models", c.models, [](const std::string& s) { return parse_model_kind(s); });
  auto parse_count = [](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    const auto v = std::stoul(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("'" + s + "' is not an integer");
    return v;
  };
  r.list("horizons", c.horizons, [&](const std::string& s) {
    try {
      const auto v = parse_count(s);
      if (v != 12 && v != 24) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument("horizon '" + s + "' outside {12, 24}");
    }
  });
  r.list("feature_sets", c.feature_sets, [&](const std::string& s) {
    try {
      const auto v = parse_count(s);
      if (v != 5 && v != 7) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw std::invalid_argument("feature set '" + s + "' outside {5, 7}");
    }
  });
  r.size("n_epoch", c.n_epoch);
  r.size("n_round", c.n_round);
  r.size("epochs", c.epochs);
  r.boolean("early_stopping", c.early_stopping);
  r.size("patience", c.patience);
  r.size("batch_size", c.batch_size);
  r.real("learning_rate", c.learning_rate);
  r.size("limited_months", c.limited_months);
  if (raw.count("seed")) {
    r.u64("seed", c.seed);
  } else {
    r.errors.push_back("seed: required (set it in the config file or with --set seed=N)");
  }
  r.text("output_dir", c.output_dir);
  std::string agg, transport;
  r.text("aggregation", agg);
  r.text("transport", transport);
  try {
    if (raw.count("aggregation")) c.aggregation = parse_aggregation(agg);
  } catch (const ConfigError& e) {
    r.errors.push_back(std::string("aggregation: ") + e.what());
  }
  try {
    if (raw.count("transport")) c.transport = parse_transport(transport);
  } catch (const ConfigError& e) {
    r.errors.push_back(std::string("transport: ") + e.what());
  }
  r.text("model_width", c.model_width);
  r.real("mape_floor", c.mape_floor);
  r.size("dtw_band", c.dtw_band);
  r.size("cluster_rounds", c.cluster_rounds);
  r.boolean("plots", c.plots);
  r.unknown_keys();

  auto& e = r.errors;
  if (c.preset != "desk" && c.preset != "paper") e.push_back("preset: expected desk or paper");
  if (c.data_source != "generate" && c.data_source != "csv") e.push_back("data_source: expected generate or csv");
  if (c.data_source == "csv" && c.data_dir.empty()) e.push_back("data_dir: required when data_source = csv");
  if (c.data_source == "generate") {
    if (c.n_clients == 0) e.push_back("n_clients: must be at least 1");
    if (c.n_hours < 24 * 7 * 4) e.push_back("n_hours: the generator needs at least 672 hours (four weeks)");
    if (c.k > c.n_clients) e.push_back("k: k exceeds client count (" + std::to_string(c.k) + " > " +
                                       std::to_string(c.n_clients) + ")");
    if (c.limited_months > 0 && c.limited_months * 30 * 24 >= c.n_hours)
      e.push_back("limited_months: " + std::to_string(c.limited_months) + " months is not shorter than the data span");
  }
  if (c.k == 0) e.push_back("k: must be at least 1");
  if (c.gap_rate < 0.0 || c.gap_rate > 0.05) e.push_back("gap_rate: must lie in [0, 0.05]");
  if (c.outlier_rate < 0.0 || c.outlier_rate > 0.05) e.push_back("outlier_rate: must lie in [0, 0.05]");
  if (c.n_round == 0) e.push_back("n_round: must be at least 1");
  if (c.batch_size == 0) e.push_back("batch_size: must be at least 1");
  if (c.early_stopping && c.patience == 0) e.push_back("patience: must be at least 1 with early stopping");
  if (!(c.learning_rate > 0.0)) e.push_back("learning_rate: must be positive");
  if (!(c.mape_floor > 0.0)) e.push_back("mape_floor: must be positive");
  if (c.model_width != "paper" && c.model_width != "reduced") e.push_back("model_width: expected paper or reduced");
  if (c.output_dir.empty()) e.push_back("output_dir: must not be empty");
  if (!e.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& line : e) msg += "\n  " + line;
    throw ConfigError(msg);
  }
  return c;
}

/// Canonical key/value form; feeding it back through validate_config gives
/// the same configuration.
inline RawConfig to_raw_config(const ExperimentConfig& c) {
  std::vector<std::string> regimes, models, horizons, features;
  for (auto r : c.regimes) regimes.push_back(regime_name(r));
  for (auto m : c.models) models.push_back(model_kind_name(m));
  for (auto h : c.horizons) horizons.push_back(std::to_string(h));
  for (auto f : c.feature_sets) features.push_back(std::to_string(f));
  return {
      {"preset", c.preset},
      {"data_source", c.data_source},
      {"data_dir", c.data_dir},
      {"n_clients", std::to_string(c.n_clients)},
      {"n_hours", std::to_string(c.n_hours)},
      {"gap_rate", detail::number_text(c.gap_rate)},
      {"outlier_rate", detail::number_text(c.outlier_rate)},
      {"k", std::to_string(c.k)},
      {"regimes", detail::join_list(regimes)},
      {"models", detail::join_list(models)},
      {"horizons", detail::join_list(horizons)},
      {"feature_sets", detail::join_list(features)},
      {"n_epoch", std::to_string(c.n_epoch)},
      {"n_round", std::to_string(c.n_round)},
      {"epochs", std::to_string(c.epochs)},
      {"early_stopping", c.early_stopping ? "true" : "false"},
      {"patience", std::to_string(c.patience)},
      {"batch_size", std::to_string(c.batch_size)},
      {"learning_rate", detail::number_text(c.learning_rate)},
      {"limited_months", std::to_string(c.limited_months)},
      {"seed", std::to_string(c.seed)},
      {"output_dir", c.output_dir},
      {"aggregation", aggregation_name(c.aggregation)},
      {"transport", transport_name(c.transport)},
      {"model_width", c.model_width},
      {"mape_floor", detail::number_text(c.mape_floor)},
      {"dtw_band", std::to_string(c.dtw_band)},
      {"cluster_rounds", std::to_string(c.cluster_rounds)},
      {"plots", c.plots ? "true" : "false"},
  };
}

inline void write_config_text(std::ostream& out, const RawConfig& raw) {
  for (const auto& [k, v] : raw) out << k << " = " << v << '\n';
}

/// Cleaned input data for an experiment, sorted by client id.
struct FleetData {
  std::vector<LoadSeries> raw;
  std::vector<LoadSeries> cleaned;
  std::vector<CleaningReport> cleaning;
  std::vector<std::size_t> archetypes;  // generated fleets only
};

inline std::vector<LoadSeries> generate_corrupted_fleet(const ExperimentConfig& c, std::vector<ClientProfile>* profiles) {
  SyntheticFleet fleet = generate_fleet(c.n_clients, c.n_hours, derive_seed(c.seed, "fleet"));
  std::vector<LoadSeries> out;
  for (const auto& s : fleet.series)
    out.push_back(inject_gaps_and_outliers(s, c.gap_rate, c.outlier_rate, derive_seed(c.seed, "corrupt/" + s.client_id)));
  if (profiles) *profiles = fleet.profiles;
  return out;
}

inline std::vector<LoadSeries> load_csv_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("data directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv" && entry.path().stem() != "fleet_manifest")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no meter CSV files in " + dir.string());
  std::vector<LoadSeries> out;
  for (const auto& f : files) out.push_back(load_meter_csv(f));
  return out;
}

inline FleetData load_fleet(const ExperimentConfig& c) {
  FleetData f;
  if (c.data_source == "csv") {
    f.raw = load_csv_directory(c.data_dir);
  } else {
    std::vector<ClientProfile> profiles;
    f.raw = generate_corrupted_fleet(c, &profiles);
    for (const auto& p : profiles) f.archetypes.push_back(static_cast<std::size_t>(p.archetype));
  }
  if (c.k > f.raw.size()) {
    throw ConfigError("k exceeds client count (" + std::to_string(c.k) + " > " + std::to_string(f.raw.size()) + ")");
  }
  for (const auto& s : f.raw) {
    CleaningReport rep;
    f.cleaned.push_back(clean_series(s, &rep));
    f.cleaning.push_back(rep);
  }
  return f;
}

inline ClusterAssignment cluster_fleet(const std::vector<LoadSeries>& cleaned, const ExperimentConfig& c) {
  std::vector<std::pair<std::string, Sequence>> profiles;
  for (const auto& s : cleaned) profiles.emplace_back(s.client_id, client_profile_for_clustering(s));
  ClusteringOptions opt;
  opt.k = c.k;
  opt.seed = derive_seed(c.seed, "clustering");
  opt.max_rounds = c.cluster_rounds;
  opt.band = c.dtw_band;
  return kmeans_dtw(profiles, opt);
}

inline void write_clustering(const std::filesystem::path& dir, const ClusterAssignment& a) {
  std::filesystem::create_directories(dir / "centroids");
  std::ofstream out(dir / "cluster_assignment.csv");
  write_assignment_csv(out, a);
  for (std::size_t k = 0; k < a.centroids.size(); ++k) {
    std::ofstream cf(dir / "centroids" / ("cluster_" + std::to_string(k) + ".csv"));
    write_centroid_csv(cf, a.centroids[k]);
  }
}

inline ModelSpec scenario_spec(const ExperimentConfig& c, ModelKind kind, std::size_t horizon, std::size_t features) {
  const std::uint64_t seed = base_model_seed(c.seed);
  return c.model_width == "reduced" ? ModelSpec::reduced(kind, horizon, features, seed)
                                    : ModelSpec::paper(kind, horizon, features, seed);
}

inline RegimeConfig regime_config(const ExperimentConfig& c, Regime r) {
  RegimeConfig rc = RegimeConfig::defaults(r);
  rc.n_epoch = c.n_epoch;
  rc.n_round = c.n_round;
  rc.epochs = c.epochs;
  rc.early_stopping = c.early_stopping;
  rc.patience = c.patience;
  rc.batch_size = c.batch_size;
  rc.aggregation = c.aggregation;
  rc.transport = c.transport;
  rc.adam.learning_rate = c.learning_rate;
  rc.mape_floor = c.mape_floor;
  return rc;
}

/// Per-client datasets for one (horizon, feature set), optionally with the
/// training partition cut to the first `limited_months`.
inline std::vector<ClientData> prepare_fleet(const std::vector<LoadSeries>& cleaned, std::size_t horizon,
                                             std::size_t features, std::size_t limited_months) {
  std::vector<ClientData> out;
  for (const auto& s : cleaned) {
    ClientDataset d = prepare_client(s, horizon, features);
    if (limited_months > 0) d = limited_data_view(d, limited_months);
    out.push_back(make_client_data(d));
  }
  return out;
}

struct MatrixOutcome {
  std::vector<MetricRow> rows;
  std::vector<std::string> failures;
  int exit_code = 0;
  double wall_seconds = 0.0;
};

namespace detail {

inline std::string scenario_tag(Regime r, ModelKind m, std::size_t h, std::size_t f) {
  return std::string(regime_name(r)) + "_" + model_kind_name(m) + "_h" + std::to_string(h) + "_f" + std::to_string(f);
}

// Non-overlapping test windows laid end to end: a continuous stretch of
// actual and predicted load for plotting.
inline std::pair<std::vector<double>, std::vector<double>> test_trace(ForecastModel& model, const ClientData& d) {
  const Tensor pred = model.predict(d.test.inputs);
  const std::size_t h = d.test.targets.dim(1);
  std::vector<double> actual, predicted;
  for (std::size_t w = 0; w < d.test.count; w += h) {
    for (std::size_t j = 0; j < h; ++j) {
      actual.push_back(d.test.targets[w * h + j]);
      predicted.push_back(pred[w * h + j]);
    }
  }
  return {actual, predicted};
}

}  // namespace detail

/// Runs every requested (regime, model, horizon, feature set) scenario and
/// writes reports, checkpoints, the cleaning report, the cluster assignment,
/// plots and a manifest into `c.output_dir`. Data and configuration problems
/// propagate as exceptions; training failures are collected per scenario.
inline MatrixOutcome run_matrix(const ExperimentConfig& c, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out_dir = c.output_dir;
  fs::create_directories(out_dir);
  auto note = [&](const std::string& s) {
    if (log) *log << s << std::endl;
  };

  const FleetData fleet = load_fleet(c);
  {
    std::ofstream out(out_dir / "cleaning_report.csv");
    write_cleaning_report(out, fleet.cleaning);
  }
  {
    std::ofstream out(out_dir / "feature_selection.csv");
    out << "client_id,feature,kind,r,selected\n";
    for (const auto& s : fleet.cleaned) {
      const FeatureSelection sel = select_features(s, s.size() * 7 / 10);
      for (const auto& cand : sel.candidates) {
        const auto& picked = cand.calendar ? sel.selected_calendar : sel.selected_weather;
        const bool chosen = std::find(picked.begin(), picked.end(), cand.name) != picked.end();
        out << s.client_id << ',' << cand.name << ',' << (cand.calendar ? "calendar" : "weather") << ','
            << (cand.defined ? detail::format_number(cand.r) : std::string("undefined")) << ',' << (chosen ? 1 : 0) << '\n';
      }
    }
  }
  note("loaded and cleaned " + std::to_string(fleet.cleaned.size()) + " clients");

  const bool federated =
      std::find(c.regimes.begin(), c.regimes.end(), Regime::federated) != c.regimes.end();
  ClusterAssignment assignment;
  if (federated) {
    assignment = cluster_fleet(fleet.cleaned, c);
    write_clustering(out_dir, assignment);
    note("clustered into " + std::to_string(assignment.k) + " groups");
  }

  MatrixOutcome outcome;
  std::ostringstream client_rows;
  client_rows << "regime,model,horizon,n_features,client_id,cluster,rmse,mae,mape\n";
  std::vector<MetricRow> cluster_rows;

  for (std::size_t h : c.horizons) {
    for (std::size_t f : c.feature_sets) {
      const std::vector<ClientData> data = prepare_fleet(fleet.cleaned, h, f, c.limited_months);
      for (ModelKind m : c.models) {
        const ModelSpec spec = scenario_spec(c, m, h, f);
        for (Regime r : c.regimes) {
          const std::string tag = detail::scenario_tag(r, m, h, f);
          const RegimeConfig rc = regime_config(c, r);
          try {
            RegimeResult res = r == Regime::central ? run_central(data, spec, rc, c.seed)
                               : r == Regime::local ? run_local(data, spec, rc, c.seed)
                                                    : run_federated(data, assignment, spec, rc, c.seed);
            const Metrics mean = res.client_mean();
            outcome.rows.push_back({regime_name(r), model_kind_name(m), h, f, mean.rmse, mean.mae, mean.mape,
                                    res.seconds_per_epoch});
            if (r == Regime::federated) {
              const Metrics cm = res.cluster_mean();
              cluster_rows.push_back({regime_name(r), model_kind_name(m), h, f, cm.rmse, cm.mae, cm.mape,
                                      res.seconds_per_epoch});
            }
            for (const auto& cm : res.clients) {
              client_rows << regime_name(r) << ',' << model_kind_name(m) << ',' << h << ',' << f << ',' << cm.client_id
                          << ',' << cm.cluster << ',' << format_metric(cm.metrics.rmse) << ','
                          << format_metric(cm.metrics.mae) << ',' << format_metric(cm.metrics.mape) << '\n';
            }
            const fs::path ckpt = out_dir / "checkpoints" / tag;
            fs::create_directories(ckpt);
            for (const auto& nm : res.models) save_parameters(ckpt / (nm.name + ".fcp"), nm.params);
            for (const auto& fl : res.failures) outcome.failures.push_back(tag + ": " + fl);

            if (c.plots && !res.clients.empty()) {
              const std::string& id = res.clients.front().client_id;
              const auto it = std::find_if(data.begin(), data.end(), [&](const ClientData& d) { return d.client_id == id; });
              const ParameterSet* params = nullptr;
              for (const auto& nm : res.models) {
                if (nm.name == id || nm.name == "central" ||
                    (r == Regime::federated && nm.name == "cluster_" + std::to_string(res.clients.front().cluster)))
                  params = &nm.params;
              }
              if (params && it != data.end()) {
                auto model = build_model(spec);
                model->set_parameters(*params);
                const auto [actual, predicted] = detail::test_trace(*model, *it);
                fs::create_directories(out_dir / "plots");
                emit_forecast_plot(id + " " + tag, actual, predicted, out_dir / "plots" / (tag + "_" + id + ".svg"));
              }
            }
            note(tag + ": rmse " + format_metric(mean.rmse) + ", " + format_seconds(res.seconds_per_epoch) +
                 " s/epoch");
          } catch (const ConfigError&) {
            throw;
          } catch (const DataError&) {
            throw;
          } catch (const Error& e) {
            outcome.failures.push_back(tag + ": " + e.what());
            note(tag + ": FAILED " + e.what());
          }
        }
      }
    }
  }

  {
    std::ofstream out(out_dir / "report.csv");
    out << emit_report_csv(outcome.rows);
  }
  {
    std::ofstream out(out_dir / "report.md");
    out << emit_report_markdown(outcome.rows);
  }
  if (!cluster_rows.empty()) {
    std::ofstream out(out_dir / "report_cluster_mean.csv");
    out << emit_report_csv(cluster_rows);
  }
  {
    std::ofstream out(out_dir / "client_metrics.csv");
    out << client_rows.str();
  }
  if (!outcome.failures.empty()) {
    std::ofstream out(out_dir / "failures.txt");
    for (const auto& fl : outcome.failures) out << fl << '\n';
    outcome.exit_code = 3;
  }
  outcome.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  {
    std::ofstream out(out_dir / "manifest.txt");
    out << "# fedstlf run manifest; rerun with: fedstlf run --config manifest.txt\n";
    out << "# wall_time_seconds = " << format_seconds(outcome.wall_seconds) << '\n';
    out << "# exit_code = " << outcome.exit_code << '\n';
    write_config_text(out, to_raw_config(c));
  }
  return outcome;
}

}  // namespace fedstlf
