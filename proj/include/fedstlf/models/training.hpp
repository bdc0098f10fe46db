#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

#include "fedstlf/core/adam.hpp"
#include "fedstlf/core/ops.hpp"
#include "fedstlf/data/windows.hpp"
#include "fedstlf/error.hpp"
#include "fedstlf/models/models.hpp"
#include "fedstlf/models/parameter_set.hpp"
#include "fedstlf/rng.hpp"

namespace fedstlf {

struct TrainOptions {
  std::size_t n_epochs = 100;
  std::size_t batch_size = 32;
  bool early_stopping = true;
  std::size_t patience = 10;
  AdamConfig adam;
  // Test hook: replaces the measured validation loss of an epoch (0-based).
  std::function<double(std::size_t epoch, double measured)> val_loss_hook;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;  // NaN when no validation data was given
  std::vector<double> epoch_seconds;
  std::size_t best_epoch = 0;  // 0-based; meaningful only with early stopping
  bool stopped_early = false;

  std::size_t epochs() const { return train_loss.size(); }

  double seconds_per_epoch() const {
    if (epoch_seconds.empty()) return 0.0;
    return std::accumulate(epoch_seconds.begin(), epoch_seconds.end(), 0.0) /
           static_cast<double>(epoch_seconds.size());
  }
};

/// Mean squared error of the model in inference mode over a block.
inline double evaluate_mse(ForecastModel& model, const WindowBlock& block) {
  if (block.count == 0) throw DataError("cannot evaluate on an empty window block");
  const Tensor pred = model.predict(block.inputs);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - block.targets[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

/// Owns one model together with its optimizer state and dropout RNG. All
/// three survive between calls to train(), so training E1 epochs and then
/// E2 more is bitwise the same as training E1+E2 epochs in one call.
class Trainer {
 public:
  Trainer(std::unique_ptr<ForecastModel> model, std::uint64_t seed, AdamConfig adam = {})
      : model_(std::move(model)), adam_(adam), rng_(seed) {
    if (!model_) throw ConfigError("trainer needs a model");
  }

  ForecastModel& model() { return *model_; }
  const ForecastModel& model() const { return *model_; }
  const Adam& optimizer() const { return adam_; }

  /// Mini-batch Adam on MSE with batches taken in chronological order. With
  /// early stopping, training halts after `patience` epochs without a new
  /// best validation loss and the best-validation weights are restored.
  TrainHistory train(const WindowBlock& train, const WindowBlock& val, const TrainOptions& opt) {
    if (train.count == 0) throw TrainingError("empty training partition");
    if (opt.batch_size == 0) throw ConfigError("batch size must be positive");
    if (opt.early_stopping && val.count == 0) throw TrainingError("early stopping needs a validation partition");
    const ModelSpec& spec = model_->spec();
    if (train.inputs.dim(1) != spec.look_back || train.inputs.dim(2) != spec.n_features ||
        train.targets.dim(1) != spec.horizon) {
      throw DimensionError("windows " + shape_string(train.inputs.shape()) + " -> " +
                           shape_string(train.targets.shape()) + " do not match the model spec");
    }
    adam_.state().config = opt.adam;

    TrainHistory h;
    double best = std::numeric_limits<double>::infinity();
    ParameterSet best_params;
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < opt.n_epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      const double loss = run_epoch(train, opt.batch_size);
      const auto t1 = std::chrono::steady_clock::now();
      h.train_loss.push_back(loss);
      h.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());

      double vloss = std::numeric_limits<double>::quiet_NaN();
      if (val.count > 0) vloss = evaluate_mse(*model_, val);
      if (opt.val_loss_hook) vloss = opt.val_loss_hook(epoch, vloss);
      h.val_loss.push_back(vloss);

      if (!opt.early_stopping) continue;
      if (vloss < best) {
        best = vloss;
        best_params = model_->get_parameters();
        h.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= opt.patience) {
        h.stopped_early = epoch + 1 < opt.n_epochs;
        break;
      }
    }
    if (opt.early_stopping && !best_params.entries.empty()) model_->set_parameters(best_params);
    return h;
  }

 private:
  double run_epoch(const WindowBlock& train, std::size_t batch_size) {
    const std::size_t n = train.count;
    const std::size_t row_in = train.inputs.size() / n;
    const std::size_t horizon = train.targets.dim(1);
    double total = 0.0;
    for (std::size_t s = 0; s < n; s += batch_size) {
      const std::size_t m = std::min(batch_size, n - s);
      Tensor x(Shape{m, train.inputs.dim(1), train.inputs.dim(2)},
               std::vector<double>(train.inputs.data() + s * row_in, train.inputs.data() + (s + m) * row_in));
      Tensor y(Shape{m, horizon},
               std::vector<double>(train.targets.data() + s * horizon, train.targets.data() + (s + m) * horizon));
      model_->zero_grads();
      Tape tape;
      const Var pred = model_->forward(tape, tape.input(std::move(x)), Mode::train, rng_);
      const Var loss = ops::mse_loss(tape, pred, y);
      const double lv = tape.value(loss)[0];
      if (!std::isfinite(lv)) throw NumericError("non-finite training loss");
      tape.backward(loss);
      adam_.update(model_->parameters());
      total += lv * static_cast<double>(m);
    }
    return total / static_cast<double>(n);
  }

  std::unique_ptr<ForecastModel> model_;
  Adam adam_;
  Rng rng_;
};

/// Convenience wrapper for one-shot training.
inline TrainHistory train_epochs(ForecastModel& model, const WindowSet& windows, const TrainOptions& opt,
                                 std::uint64_t seed) {
  const WindowBlock train = windows.select(Partition::train);
  const WindowBlock val = windows.select(Partition::val);
  // A Trainer owns its model, so run on a copy of the parameters and write
  // the result back.
  auto clone = build_model(model.spec());
  clone->set_parameters(model.get_parameters());
  Trainer t(std::move(clone), seed, opt.adam);
  TrainHistory h = t.train(train, val, opt);
  model.set_parameters(t.model().get_parameters());
  return h;
}

}  // namespace fedstlf
