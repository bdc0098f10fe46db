// fedstlf command-line front end: generate, cluster, run, report.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedstlf/fedstlf.hpp"

namespace fs = std::filesystem;
using namespace fedstlf;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDataError = 2, kTrainingError = 3 };

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", args.overrides, "override one key (key=value); repeatable");
}

// Preset defaults < config file < FEDSTLF_OUTPUT_DIR < --set.
ExperimentConfig resolve_config(const ConfigArgs& args) {
  RawConfig file;
  if (!args.config_path.empty()) file = load_config_file(args.config_path);
  std::vector<std::pair<std::string, std::string>> overrides;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) overrides.emplace_back("output_dir", env);
  for (const auto& kv : args.overrides) overrides.push_back(parse_override(kv));
  return validate_config(merge_config(file, overrides));
}

int cmd_generate(const ConfigArgs& args, const std::string& out_arg) {
  const ExperimentConfig c = resolve_config(args);
  if (c.data_source != "generate") throw ConfigError("generate needs data_source = generate");
  const fs::path out = out_arg.empty() ? fs::path(c.output_dir) / "data" : fs::path(out_arg);
  fs::create_directories(out);
  std::vector<ClientProfile> profiles;
  const auto series = generate_corrupted_fleet(c, &profiles);
  std::ofstream manifest(out / "fleet_manifest.csv");
  manifest << "client_id,archetype,seed\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    save_meter_csv(out / (series[i].client_id + ".csv"), series[i]);
    manifest << profiles[i].client_id << ',' << archetype_name(profiles[i].archetype) << ',' << profiles[i].seed << '\n';
  }
  std::cout << "wrote " << series.size() << " meter files to " << out.string() << '\n';
  return kOk;
}

int cmd_cluster(const ConfigArgs& args) {
  const ExperimentConfig c = resolve_config(args);
  const FleetData fleet = load_fleet(c);
  const ClusterAssignment a = cluster_fleet(fleet.cleaned, c);
  write_clustering(c.output_dir, a);
  for (std::size_t k = 0; k < a.k; ++k) {
    std::cout << "cluster " << k << ':';
    for (const auto& id : a.members(k)) std::cout << ' ' << id;
    std::cout << '\n';
  }
  if (!fleet.archetypes.empty()) {
    std::cout << "purity against generator archetypes: " << format_metric(cluster_purity(a.labels, fleet.archetypes))
              << '\n';
  }
  return kOk;
}

int cmd_run(const ConfigArgs& args, bool quiet) {
  const ExperimentConfig c = resolve_config(args);
  const MatrixOutcome outcome = run_matrix(c, quiet ? nullptr : &std::cerr);
  std::cout << "wrote " << outcome.rows.size() << " rows to " << (fs::path(c.output_dir) / "report.csv").string()
            << '\n';
  if (!outcome.failures.empty()) {
    std::cerr << outcome.failures.size() << " scenario failure(s):\n";
    for (const auto& f : outcome.failures) std::cerr << "  " << f << '\n';
  }
  return outcome.exit_code;
}

int cmd_report(const std::string& input, const std::string& format) {
  std::ifstream in(input);
  if (!in) throw DataError("cannot read report " + input);
  const auto rows = parse_report_csv(in);
  std::cout << emit_report(rows, format == "csv" ? ReportFormat::csv : ReportFormat::markdown);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustered federated short-term load forecasting experiments"};
  app.require_subcommand(1);

  ConfigArgs gen_args, cluster_args, run_args;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic meter fleet as CSV files");
  add_config_options(gen, gen_args);
  gen->add_option("-o,--out", gen_out, "target directory (default: <output_dir>/data)");

  auto* cluster = app.add_subcommand("cluster", "clean the fleet and cluster clients by weekly profile");
  add_config_options(cluster, cluster_args);

  bool quiet = false;
  auto* run = app.add_subcommand("run", "run the scenario matrix and write reports");
  add_config_options(run, run_args);
  run->add_flag("-q,--quiet", quiet, "no per-scenario progress on stderr");

  std::string report_input, report_format = "markdown";
  auto* report = app.add_subcommand("report", "re-render a stored report.csv");
  report->add_option("-i,--input", report_input, "report.csv from a previous run")->required();
  report->add_option("-f,--format", report_format, "markdown or csv")->check(CLI::IsMember({"markdown", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*gen) return cmd_generate(gen_args, gen_out);
    if (*cluster) return cmd_cluster(cluster_args);
    if (*run) return cmd_run(run_args, quiet);
    if (*report) return cmd_report(report_input, report_format);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const Error& e) {
    std::cerr << "training failure: " << e.what() << '\n';
    return kTrainingError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kTrainingError;
  }
  return kOk;
}
