#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <exception>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedstlf/clustering.hpp"
#include "fedstlf/data/windows.hpp"
#include "fedstlf/error.hpp"
#include "fedstlf/evaluation.hpp"
#include "fedstlf/federated/transport.hpp"
#include "fedstlf/models/models.hpp"
#include "fedstlf/models/parameter_set.hpp"
#include "fedstlf/models/training.hpp"
#include "fedstlf/rng.hpp"

namespace fedstlf {

enum class Regime { central, local, federated };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::central: return "central";
    case Regime::local: return "local";
    case Regime::federated: return "federated";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "central") return Regime::central;
  if (s == "local") return Regime::local;
  if (s == "federated") return Regime::federated;
  throw ConfigError("unknown regime '" + s + "' (expected central, local or federated)");
}

enum class Aggregation { data_weighted, uniform };

inline const char* aggregation_name(Aggregation a) {
  return a == Aggregation::data_weighted ? "data_weighted" : "uniform";
}

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "data_weighted") return Aggregation::data_weighted;
  if (s == "uniform") return Aggregation::uniform;
  throw ConfigError("unknown aggregation '" + s + "' (expected data_weighted or uniform)");
}

struct RegimeConfig {
  Regime regime = Regime::federated;
  std::size_t n_epoch = 20;  // federated: local epochs per round
  std::size_t n_round = 2;   // federated: communication rounds
  std::size_t epochs = 100;  // central and local
  bool early_stopping = true;  // central and local only
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  Aggregation aggregation = Aggregation::data_weighted;
  TransportKind transport = TransportKind::in_process;
  bool parallel_clusters = true;
  AdamConfig adam;
  double mape_floor = kMapeFloor;

  static RegimeConfig defaults(Regime r) {
    RegimeConfig c;
    c.regime = r;
    return c;
  }
};

/// One client's materialized partitions.
struct ClientData {
  std::string client_id;
  ScalerParams scaler;
  WindowBlock train, val, test;
};

inline ClientData make_client_data(const ClientDataset& d) {
  return {d.client_id, d.scaler, d.windows.select(Partition::train), d.windows.select(Partition::val),
          d.windows.select(Partition::test)};
}

/// Seed of the server's random base model.
inline std::uint64_t base_model_seed(std::uint64_t master) { return derive_seed(master, "w_rand"); }

/// Seed of the optimizer/dropout stream for a model trained on `ids`. A
/// function of the training population only, so the same client trains
/// identically under every regime.
inline std::uint64_t trainer_seed(std::uint64_t master, const std::vector<std::string>& ids) {
  std::string tag = "trainer/";
  for (std::size_t i = 0; i < ids.size(); ++i) tag += (i ? "+" : "") + ids[i];
  return derive_seed(master, tag);
}

/// The server's random starting weights w_rand.
inline ParameterSet init_base_model(ModelSpec spec, std::uint64_t seed) {
  spec.seed = seed;
  return build_model(spec)->get_parameters();
}

struct ClientUpdate {
  std::string client_id;
  ParameterSet params;
  std::size_t n_samples = 0;
  double seconds_per_epoch = 0.0;
};

/// Element-wise weighted mean of client parameter sets, reduced in client-id
/// order so the result does not depend on arrival order. Computed as
/// x_0 + sum_i w_i (x_i - x_0), which returns identical inputs bit for bit.
inline ParameterSet aggregate(std::span<const ClientUpdate> updates, Aggregation mode) {
  if (updates.empty()) throw AggregationError("nothing to aggregate");
  std::vector<const ClientUpdate*> order;
  for (const auto& u : updates) order.push_back(&u);
  std::stable_sort(order.begin(), order.end(),
                   [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  const ParameterSet& ref = order.front()->params;
  std::size_t total = 0;
  for (const ClientUpdate* u : order) {
    if (u->n_samples == 0) throw AggregationError("client '" + u->client_id + "' reports zero training samples");
    total += u->n_samples;
    if (!u->params.same_manifest(ref)) {
      throw AggregationError("client '" + u->client_id + "' sent a mismatched parameter set at layer '" +
                             u->params.first_mismatch(ref) + "'");
    }
  }
  std::vector<double> weights;
  for (const ClientUpdate* u : order) {
    weights.push_back(mode == Aggregation::uniform
                          ? 1.0 / static_cast<double>(order.size())
                          : static_cast<double>(u->n_samples) / static_cast<double>(total));
  }
  ParameterSet out = ref;
  for (std::size_t e = 0; e < out.entries.size(); ++e) {
    std::vector<double>& acc = out.entries[e].values;
    const std::vector<double>& base = ref.entries[e].values;
    for (std::size_t i = 1; i < order.size(); ++i) {
      const std::vector<double>& x = order[i]->params.entries[e].values;
      for (std::size_t j = 0; j < acc.size(); ++j) {
        const double d = x[j] - base[j];
        if (d != 0.0) acc[j] += weights[i] * d;
      }
    }
  }
  return out;
}

/// Synchronize with the cluster model, then train n_epoch epochs without
/// early stopping.
inline ClientUpdate local_update(Trainer& trainer, const ClientData& data, const ParameterSet& w_in,
                                 std::size_t n_epoch, const RegimeConfig& cfg) {
  try {
    trainer.model().set_parameters(w_in);
    TrainOptions opt;
    opt.n_epochs = n_epoch;
    opt.batch_size = cfg.batch_size;
    opt.early_stopping = false;
    opt.adam = cfg.adam;
    const TrainHistory h = trainer.train(data.train, WindowBlock{}, opt);
    return {data.client_id, trainer.model().get_parameters(), data.train.count, h.seconds_per_epoch()};
  } catch (const Error& e) {
    throw TrainingError("client '" + data.client_id + "': " + e.what());
  }
}

/// Test-partition metrics of `model` on one client (scaled units).
inline ClientMetrics evaluate_client(ForecastModel& model, const ClientData& data, double mape_floor) {
  if (data.test.count == 0) throw DataError(data.client_id + ": empty test partition");
  const Tensor pred = model.predict(data.test.inputs);
  ClientMetrics m;
  m.client_id = data.client_id;
  m.metrics = compute_metrics(pred.values(), data.test.targets.values(), mape_floor);
  m.n_test = data.test.count;
  return m;
}

struct ClusterModel {
  std::size_t cluster = 0;
  std::vector<std::string> members;
  ParameterSet weights;
  std::size_t round = 0;
  std::size_t broadcasts = 0;
  std::size_t collects = 0;
};

struct NamedParameters {
  std::string name;
  ParameterSet params;
};

/// Outcome of one regime on one (model, horizon, feature set) scenario.
struct RegimeResult {
  Regime regime = Regime::federated;
  std::vector<ClientMetrics> clients;  // client-id order
  std::vector<NamedParameters> models;
  std::vector<ClusterModel> clusters;  // federated only
  std::vector<std::string> failures;   // local only: isolated per-client failures
  double seconds_per_epoch = 0.0;

  Metrics client_mean() const { return client_mean_metrics(clients); }
  Metrics cluster_mean() const { return cluster_mean_metrics(clients); }
};

namespace detail {

inline constexpr char kUpdateMagic[4] = {'F', 'C', 'U', '1'};
inline constexpr char kErrorMagic[4] = {'F', 'E', 'R', 'R'};

inline Bytes encode_update_header(std::size_t n_samples, double seconds) {
  Bytes b(std::begin(kUpdateMagic), std::end(kUpdateMagic));
  put_u32(b, static_cast<std::uint32_t>(n_samples));
  put_u32(b, static_cast<std::uint32_t>(static_cast<std::uint64_t>(n_samples) >> 32));
  put_f64(b, seconds);
  return b;
}

inline Bytes encode_error(const std::string& message) {
  Bytes b(std::begin(kErrorMagic), std::end(kErrorMagic));
  b.insert(b.end(), message.begin(), message.end());
  return b;
}

inline bool has_magic(const Bytes& b, const char (&magic)[4]) {
  return b.size() >= 4 && std::memcmp(b.data(), magic, 4) == 0;
}

inline std::unique_ptr<Trainer> make_trainer(const ModelSpec& spec, const ParameterSet& w_rand,
                                             std::uint64_t seed, const AdamConfig& adam) {
  auto model = build_model(spec);
  model->set_parameters(w_rand);
  return std::make_unique<Trainer>(std::move(model), seed, adam);
}

inline double mean_positive(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (x > 0.0) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

// Client side of a federated session: wait for the cluster model, train,
// send the update; an empty frame ends the session.
inline void client_session(FrameChannel& channel, Trainer& trainer, const ClientData& data, const RegimeConfig& cfg) {
  while (true) {
    const Bytes frame = channel.receive();
    if (frame.empty()) return;
    try {
      const ParameterSet w = decode_parameters(frame);
      const ClientUpdate u = local_update(trainer, data, w, cfg.n_epoch, cfg);
      channel.send(encode_update_header(u.n_samples, u.seconds_per_epoch));
      channel.send(encode_parameters(u.params));
    } catch (const std::exception& e) {
      channel.send(encode_error(e.what()));
    }
  }
}

struct ClusterRun {
  ClusterModel model;
  std::vector<double> epoch_seconds;
};

inline ClusterRun run_cluster(std::size_t cluster, const std::vector<const ClientData*>& members,
                              const ModelSpec& spec, const ParameterSet& w_rand, const RegimeConfig& cfg,
                              std::uint64_t master) {
  ClusterRun run;
  run.model.cluster = cluster;
  run.model.weights = w_rand;
  for (const ClientData* c : members) run.model.members.push_back(c->client_id);

  const std::size_t n = members.size();
  std::vector<std::unique_ptr<Trainer>> trainers;
  std::vector<Link> links;
  for (const ClientData* c : members) {
    trainers.push_back(make_trainer(spec, w_rand, trainer_seed(master, {c->client_id}), cfg.adam));
    links.push_back(make_link(cfg.transport));
  }
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < n; ++i) {
    workers.emplace_back([&, i] {
      try {
        client_session(*links[i].client, *trainers[i], *members[i], cfg);
      } catch (const std::exception&) {
        // The server notices through its own receive failing.
      }
    });
  }
  auto shutdown = [&] {
    for (auto& l : links) {
      try {
        l.server->send(Bytes{});
      } catch (const std::exception&) {
      }
    }
    for (auto& w : workers) w.join();
  };

  try {
    for (std::size_t round = 0; round < cfg.n_round; ++round) {
      const Bytes broadcast = encode_parameters(run.model.weights);
      for (auto& l : links) {
        l.server->send(broadcast);
        ++run.model.broadcasts;
      }
      std::vector<ClientUpdate> updates;
      std::vector<std::string> errors;
      for (std::size_t i = 0; i < n; ++i) {
        const Bytes head = links[i].server->receive();
        if (has_magic(head, kErrorMagic)) {
          errors.push_back(std::string(head.begin() + 4, head.end()));
          continue;
        }
        if (!has_magic(head, kUpdateMagic) || head.size() != 20) {
          throw TransportError("client '" + members[i]->client_id + "' sent a malformed update header");
        }
        ByteReader r(std::span<const std::uint8_t>(head).subspan(4));
        const std::uint64_t lo = r.u32(), hi = r.u32();
        ClientUpdate u;
        u.client_id = members[i]->client_id;
        u.n_samples = static_cast<std::size_t>(lo | hi << 32);
        u.seconds_per_epoch = r.f64();
        u.params = decode_parameters(links[i].server->receive());
        ++run.model.collects;
        run.epoch_seconds.push_back(u.seconds_per_epoch);
        updates.push_back(std::move(u));
      }
      if (!errors.empty()) {
        std::string msg = "cluster " + std::to_string(cluster) + " round " + std::to_string(round + 1) + " aborted:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw TrainingError(msg);
      }
      run.model.weights = aggregate(updates, cfg.aggregation);
      ++run.model.round;
    }
  } catch (...) {
    shutdown();
    throw;
  }
  shutdown();
  return run;
}

inline WindowBlock concat_blocks(const std::vector<const WindowBlock*>& blocks) {
  WindowBlock out;
  std::vector<double> x, y;
  Shape in_shape, out_shape;
  for (const WindowBlock* b : blocks) {
    if (b->count == 0) continue;
    if (in_shape.empty()) {
      in_shape = b->inputs.shape();
      out_shape = b->targets.shape();
    } else if (b->inputs.dim(1) != in_shape[1] || b->inputs.dim(2) != in_shape[2] ||
               b->targets.dim(1) != out_shape[1]) {
      throw DimensionError("cannot merge window blocks of different shapes");
    }
    x.insert(x.end(), b->inputs.storage().begin(), b->inputs.storage().end());
    y.insert(y.end(), b->targets.storage().begin(), b->targets.storage().end());
    out.starts.insert(out.starts.end(), b->starts.begin(), b->starts.end());
    out.count += b->count;
  }
  if (out.count == 0) return out;
  out.inputs = Tensor(Shape{out.count, in_shape[1], in_shape[2]}, std::move(x));
  out.targets = Tensor(Shape{out.count, out_shape[1]}, std::move(y));
  return out;
}

inline std::vector<const ClientData*> sorted_by_id(const std::vector<ClientData>& fleet) {
  std::vector<const ClientData*> out;
  for (const auto& c : fleet) out.push_back(&c);
  std::sort(out.begin(), out.end(), [](const ClientData* a, const ClientData* b) { return a->client_id < b->client_id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i]->client_id == out[i - 1]->client_id) throw DataError("duplicate client id '" + out[i]->client_id + "'");
  return out;
}

}  // namespace detail

/// Clustered federated averaging: every cluster starts from w_rand and for
/// n_round rounds broadcasts its model, lets each member train n_epoch
/// epochs, and replaces its model by the aggregate. Clients are evaluated on
/// their test partitions with their cluster's final model.
inline RegimeResult run_federated(const std::vector<ClientData>& fleet, const ClusterAssignment& assignment,
                                  const ModelSpec& spec, const RegimeConfig& cfg, std::uint64_t master) {
  if (fleet.empty()) throw ConfigError("federated run needs at least one client");
  const auto clients = detail::sorted_by_id(fleet);
  std::vector<std::vector<const ClientData*>> groups;
  for (const ClientData* c : clients) {
    const std::size_t k = assignment.cluster_of(c->client_id);
    if (groups.size() <= k) groups.resize(k + 1);
    groups[k].push_back(c);
  }
  const ParameterSet w_rand = init_base_model(spec, base_model_seed(master));

  std::vector<detail::ClusterRun> runs(groups.size());
  std::vector<std::exception_ptr> failures(groups.size());
  auto work = [&](std::size_t k) {
    try {
      if (!groups[k].empty()) runs[k] = detail::run_cluster(k, groups[k], spec, w_rand, cfg, master);
    } catch (...) {
      failures[k] = std::current_exception();
    }
  };
  if (cfg.parallel_clusters) {
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < groups.size(); ++k) threads.emplace_back(work, k);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t k = 0; k < groups.size(); ++k) work(k);
  }
  std::string errors;
  for (auto& f : failures) {
    if (!f) continue;
    try {
      std::rethrow_exception(f);
    } catch (const std::exception& e) {
      errors += (errors.empty() ? "" : "\n") + std::string(e.what());
    }
  }
  if (!errors.empty()) throw TrainingError(errors);

  RegimeResult result;
  result.regime = Regime::federated;
  std::vector<double> seconds;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) continue;
    auto model = build_model(spec);
    model->set_parameters(runs[k].model.weights);
    for (const ClientData* c : groups[k]) {
      ClientMetrics m = evaluate_client(*model, *c, cfg.mape_floor);
      m.cluster = k;
      m.seconds_per_epoch = detail::mean_positive(runs[k].epoch_seconds);
      result.clients.push_back(std::move(m));
    }
    seconds.insert(seconds.end(), runs[k].epoch_seconds.begin(), runs[k].epoch_seconds.end());
    result.models.push_back({"cluster_" + std::to_string(k), runs[k].model.weights});
    result.clusters.push_back(std::move(runs[k].model));
  }
  std::sort(result.clients.begin(), result.clients.end(),
            [](const ClientMetrics& a, const ClientMetrics& b) { return a.client_id < b.client_id; });
  result.seconds_per_epoch = detail::mean_positive(seconds);
  return result;
}

/// Independent training per client with early stopping; a failing client is
/// recorded and the others continue.
inline RegimeResult run_local(const std::vector<ClientData>& fleet, const ModelSpec& spec, const RegimeConfig& cfg,
                              std::uint64_t master) {
  if (fleet.empty()) throw ConfigError("local run needs at least one client");
  const ParameterSet w_rand = init_base_model(spec, base_model_seed(master));
  RegimeResult result;
  result.regime = Regime::local;
  std::vector<double> seconds;
  for (const ClientData* c : detail::sorted_by_id(fleet)) {
    try {
      auto trainer = detail::make_trainer(spec, w_rand, trainer_seed(master, {c->client_id}), cfg.adam);
      TrainOptions opt;
      opt.n_epochs = cfg.epochs;
      opt.batch_size = cfg.batch_size;
      opt.early_stopping = cfg.early_stopping;
      opt.patience = cfg.patience;
      opt.adam = cfg.adam;
      const TrainHistory h = trainer->train(c->train, c->val, opt);
      ClientMetrics m = evaluate_client(trainer->model(), *c, cfg.mape_floor);
      m.seconds_per_epoch = h.seconds_per_epoch();
      seconds.push_back(m.seconds_per_epoch);
      result.clients.push_back(std::move(m));
      result.models.push_back({c->client_id, trainer->model().get_parameters()});
    } catch (const Error& e) {
      result.failures.push_back(c->client_id + ": " + e.what());
    }
  }
  if (result.clients.empty()) {
    std::string msg = "every local training failed:";
    for (const auto& f : result.failures) msg += "\n  " + f;
    throw TrainingError(msg);
  }
  result.seconds_per_epoch = detail::mean_positive(seconds);
  return result;
}

/// One model on the merged training windows of every client (client-id
/// order, each chronological), evaluated per client.
inline RegimeResult run_central(const std::vector<ClientData>& fleet, const ModelSpec& spec, const RegimeConfig& cfg,
                                std::uint64_t master) {
  if (fleet.empty()) throw ConfigError("central run needs at least one client");
  const auto clients = detail::sorted_by_id(fleet);
  std::vector<const WindowBlock*> train, val;
  std::vector<std::string> ids;
  for (const ClientData* c : clients) {
    train.push_back(&c->train);
    val.push_back(&c->val);
    ids.push_back(c->client_id);
  }
  const WindowBlock merged_train = detail::concat_blocks(train);
  const WindowBlock merged_val = detail::concat_blocks(val);
  const ParameterSet w_rand = init_base_model(spec, base_model_seed(master));
  auto trainer = detail::make_trainer(spec, w_rand, trainer_seed(master, ids), cfg.adam);
  TrainOptions opt;
  opt.n_epochs = cfg.epochs;
  opt.batch_size = cfg.batch_size;
  opt.early_stopping = cfg.early_stopping;
  opt.patience = cfg.patience;
  opt.adam = cfg.adam;
  TrainHistory h;
  try {
    h = trainer->train(merged_train, merged_val, opt);
  } catch (const Error& e) {
    throw TrainingError(std::string("central training: ") + e.what());
  }
  RegimeResult result;
  result.regime = Regime::central;
  for (const ClientData* c : clients) {
    ClientMetrics m = evaluate_client(trainer->model(), *c, cfg.mape_floor);
    m.seconds_per_epoch = h.seconds_per_epoch();
    result.clients.push_back(std::move(m));
  }
  result.models.push_back({"central", trainer->model().get_parameters()});
  result.seconds_per_epoch = h.seconds_per_epoch();
  return result;
}

}  // namespace fedstlf
