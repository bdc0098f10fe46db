// Library walkthrough: synthetic fleet -> cleaning -> clustering ->
// clustered federated training next to local training, on one scenario.

#include <iostream>

#include "fedstlf/fedstlf.hpp"

using namespace fedstlf;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 1;

  SyntheticFleet fleet = generate_fleet(6, 24 * 7 * 10, seed);
  std::vector<LoadSeries> cleaned;
  std::vector<std::pair<std::string, Sequence>> profiles;
  for (const auto& s : fleet.series) {
    const LoadSeries dirty = inject_gaps_and_outliers(s, 0.005, 0.002, derive_seed(seed, s.client_id));
    cleaned.push_back(clean_series(dirty));
    profiles.emplace_back(s.client_id, client_profile_for_clustering(cleaned.back()));
  }

  ClusteringOptions copt;
  copt.k = 3;
  copt.seed = seed;
  const ClusterAssignment clusters = kmeans_dtw(profiles, copt);
  for (std::size_t k = 0; k < clusters.k; ++k) {
    std::cout << "cluster " << k << ":";
    for (const auto& id : clusters.members(k)) std::cout << ' ' << id;
    std::cout << '\n';
  }

  std::vector<ClientData> data;
  for (const auto& s : cleaned) data.push_back(make_client_data(prepare_client(s, 12, 5)));
  const ModelSpec spec = ModelSpec::reduced(ModelKind::transformer, 12, 5, base_model_seed(seed));

  RegimeConfig fed = RegimeConfig::defaults(Regime::federated);
  fed.n_epoch = 3;
  fed.n_round = 2;
  RegimeConfig local = RegimeConfig::defaults(Regime::local);
  local.epochs = 6;

  const RegimeResult f = run_federated(data, clusters, spec, fed, seed);
  const RegimeResult l = run_local(data, spec, local, seed);
  std::cout << "federated mean test RMSE " << format_metric(f.client_mean().rmse) << '\n';
  std::cout << "local     mean test RMSE " << format_metric(l.client_mean().rmse) << '\n';
  return 0;
}
