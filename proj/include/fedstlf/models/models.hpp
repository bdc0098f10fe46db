#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedstlf/core/layers.hpp"
#include "fedstlf/core/ops.hpp"
#include "fedstlf/core/tape.hpp"
#include "fedstlf/data/windows.hpp"
#include "fedstlf/error.hpp"
#include "fedstlf/models/parameter_set.hpp"
#include "fedstlf/rng.hpp"

namespace fedstlf {

using ops::Activation;
using ops::Mode;

enum class ModelKind { transformer, lstm, cnn };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::transformer: return "transformer";
    case ModelKind::lstm: return "lstm";
    case ModelKind::cnn: return "cnn";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "transformer") return ModelKind::transformer;
  if (s == "lstm") return ModelKind::lstm;
  if (s == "cnn") return ModelKind::cnn;
  throw ConfigError("unknown model kind '" + s + "' (expected transformer, lstm or cnn)");
}

/// Task shape plus architecture hyperparameters. Defaults are the published
/// configurations; `reduced` shrinks widths for fast tests.
struct ModelSpec {
  ModelKind kind = ModelKind::transformer;
  std::size_t look_back = kLookBack;
  std::size_t horizon = 12;
  std::size_t n_features = 5;
  std::uint64_t seed = 0;

  // transformer
  std::size_t heads = 2;
  std::size_t head_size = 4;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t encoder_lstm_cells = 7;
  // lstm
  std::size_t lstm_layers = 6;
  std::size_t lstm_cells = 32;
  // cnn
  std::size_t conv_layers = 4;
  std::size_t conv_filters = 32;
  std::size_t conv_width = 3;
  // shared head
  std::size_t dense_units = 32;
  double dropout = 0.2;

  static ModelSpec paper(ModelKind kind, std::size_t horizon, std::size_t n_features, std::uint64_t seed) {
    ModelSpec s;
    s.kind = kind;
    s.horizon = horizon;
    s.n_features = n_features;
    s.seed = seed;
    return s;
  }

  static ModelSpec reduced(ModelKind kind, std::size_t horizon, std::size_t n_features, std::uint64_t seed) {
    ModelSpec s = paper(kind, horizon, n_features, seed);
    s.encoder_layers = 1;
    s.decoder_layers = 1;
    s.encoder_lstm_cells = 4;
    s.lstm_layers = 2;
    s.lstm_cells = 8;
    s.conv_layers = 2;
    s.conv_filters = 8;
    s.dense_units = 8;
    return s;
  }

  std::size_t model_width() const { return heads * head_size; }

  void validate() const {
    if (horizon == 0 || look_back == 0) throw ConfigError("model spec: horizon and look-back must be positive");
    if (n_features == 0) throw ConfigError("model spec: need at least one feature");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model spec: dropout must lie in [0, 1)");
  }
};

/// Common interface of the three forecasters. Parameters are registered in
/// a fixed order at construction, so the ParameterSet manifest is a pure
/// function of the ModelSpec.
class ForecastModel {
 public:
  explicit ForecastModel(ModelSpec spec) : spec_(spec) { spec_.validate(); }
  virtual ~ForecastModel() = default;
  ForecastModel(const ForecastModel&) = delete;
  ForecastModel& operator=(const ForecastModel&) = delete;

  const ModelSpec& spec() const { return spec_; }

  /// x: [batch, look_back, n_features] -> [batch, horizon].
  virtual Var forward(Tape& tape, Var x, Mode mode, Rng& rng) = 0;

  std::span<Parameter* const> parameters() const { return params_; }

  std::size_t parameter_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const Parameter* p : params_)
      if (p->trainable || !trainable_only) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (Parameter* p : params_) p->zero_grad();
  }

  ParameterSet get_parameters() const {
    ParameterSet out;
    out.entries.reserve(params_.size());
    for (const Parameter* p : params_) out.entries.push_back({p->name, p->value.shape(), p->value.storage()});
    return out;
  }

  void set_parameters(const ParameterSet& set) {
    if (set.entries.size() != params_.size()) {
      const std::size_t i = std::min(set.entries.size(), params_.size());
      const std::string name = i < params_.size() ? params_[i]->name : set.entries[i].name;
      throw TransportError("parameter set has " + std::to_string(set.entries.size()) + " entries, model has " +
                           std::to_string(params_.size()) + "; first unmatched entry '" + name + "'");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& e = set.entries[i];
      if (e.name != params_[i]->name || e.shape != params_[i]->value.shape() ||
          e.values.size() != params_[i]->value.size()) {
        throw TransportError("parameter '" + e.name + "' " + shape_string(e.shape) + " does not match model entry '" +
                             params_[i]->name + "' " + shape_string(params_[i]->value.shape()));
      }
    }
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value.storage() = set.entries[i].values;
  }

  /// Inference-mode forward in chunks; dropout off, batch norm on running
  /// statistics.
  Tensor predict(const Tensor& inputs, std::size_t chunk = 256) {
    const std::size_t n = inputs.dim(0);
    const std::size_t row = inputs.size() / n;
    std::vector<double> out;
    out.reserve(n * spec_.horizon);
    Rng unused(0);
    for (std::size_t s = 0; s < n; s += chunk) {
      const std::size_t m = std::min(chunk, n - s);
      Tensor x(Shape{m, inputs.dim(1), inputs.dim(2)},
               std::vector<double>(inputs.data() + s * row, inputs.data() + (s + m) * row));
      Tape tape;
      const Var y = forward(tape, tape.constant(std::move(x)), Mode::infer, unused);
      const Tensor& yv = tape.value(y);
      out.insert(out.end(), yv.storage().begin(), yv.storage().end());
    }
    return Tensor(Shape{n, spec_.horizon}, std::move(out));
  }

 protected:
  void check_input(const Tape& tape, Var x) const {
    const Shape& s = tape.shape(x);
    if (s.size() != 3 || s[1] != spec_.look_back || s[2] != spec_.n_features) {
      throw DimensionError(std::string(model_kind_name(spec_.kind)) + " expects input [batch, " +
                           std::to_string(spec_.look_back) + ", " + std::to_string(spec_.n_features) + "], got " +
                           shape_string(s));
    }
  }

  ModelSpec spec_;
  std::vector<Parameter*> params_;
};

/// Encoder-decoder transformer: input projection to width heads*head_size;
/// encoder layers of self-attention (dropout) + residual, dense ReLU +
/// residual, layer norm; an LSTM over the encoder output provides the
/// decoder's keys and values; decoder layers of cross-attention + residual,
/// dense ReLU, layer norm; global average pooling and a dense output.
class TransformerModel final : public ForecastModel {
 public:
  explicit TransformerModel(const ModelSpec& spec) : ForecastModel(spec) {
    if (spec.kind != ModelKind::transformer) throw ConfigError("TransformerModel needs a transformer spec");
    Rng rng(spec.seed);
    const std::size_t d = spec.model_width();
    input_ = std::make_unique<layers::Dense>("input_projection", spec.n_features, d, Activation::none, rng);
    for (std::size_t i = 0; i < spec.encoder_layers; ++i) {
      const std::string p = "encoder" + std::to_string(i);
      encoders_.push_back(std::make_unique<EncoderLayer>(p, d, spec, rng));
    }
    encoder_lstm_ = std::make_unique<layers::Lstm>("encoder_lstm", d, spec.encoder_lstm_cells, true, rng);
    for (std::size_t i = 0; i < spec.decoder_layers; ++i) {
      const std::string p = "decoder" + std::to_string(i);
      decoders_.push_back(std::make_unique<DecoderLayer>(p, d, spec, rng));
    }
    head_ = std::make_unique<layers::Dense>("head", d, spec.horizon, Activation::none, rng);

    input_->collect(params_);
    for (auto& e : encoders_) e->collect(params_);
    encoder_lstm_->collect(params_);
    for (auto& dl : decoders_) dl->collect(params_);
    head_->collect(params_);
  }

  Var forward(Tape& tape, Var x, Mode mode, Rng& rng) override {
    check_input(tape, x);
    const Var embedded = input_->forward(tape, x);
    Var h = embedded;
    for (auto& e : encoders_) h = e->forward(tape, h, mode, rng, spec_.dropout);
    const Var memory = encoder_lstm_->forward(tape, h);
    Var z = embedded;
    for (auto& dl : decoders_) z = dl->forward(tape, z, memory);
    const Var pooled = ops::mean_over_time(tape, z);
    return head_->forward(tape, pooled);
  }

 private:
  struct EncoderLayer {
    layers::MultiHeadAttention attention;
    layers::Dense feed_forward;
    layers::LayerNorm norm;

    EncoderLayer(const std::string& p, std::size_t d, const ModelSpec& s, Rng& rng)
        : attention(p + ".attention", d, d, s.heads, s.head_size, rng),
          feed_forward(p + ".dense", d, d, Activation::relu, rng),
          norm(p + ".norm", d) {}

    Var forward(Tape& tape, Var x, Mode mode, Rng& rng, double rate) {
      Var a = attention.forward(tape, x, x);
      a = ops::dropout(tape, a, rate, mode, rng);
      const Var r1 = ops::add(tape, x, a);
      const Var f = feed_forward.forward(tape, r1);
      const Var r2 = ops::add(tape, r1, f);
      return norm.forward(tape, r2);
    }

    void collect(std::vector<Parameter*>& out) {
      attention.collect(out);
      feed_forward.collect(out);
      norm.collect(out);
    }
  };

  struct DecoderLayer {
    layers::MultiHeadAttention attention;
    layers::Dense feed_forward;
    layers::LayerNorm norm;

    DecoderLayer(const std::string& p, std::size_t d, const ModelSpec& s, Rng& rng)
        : attention(p + ".attention", d, s.encoder_lstm_cells, s.heads, s.head_size, rng),
          feed_forward(p + ".dense", d, d, Activation::relu, rng),
          norm(p + ".norm", d) {}

    Var forward(Tape& tape, Var z, Var memory) {
      const Var a = attention.forward(tape, z, memory);
      const Var r = ops::add(tape, z, a);
      const Var f = feed_forward.forward(tape, r);
      return norm.forward(tape, f);
    }

    void collect(std::vector<Parameter*>& out) {
      attention.collect(out);
      feed_forward.collect(out);
      norm.collect(out);
    }
  };

  std::unique_ptr<layers::Dense> input_;
  std::vector<std::unique_ptr<EncoderLayer>> encoders_;
  std::unique_ptr<layers::Lstm> encoder_lstm_;
  std::vector<std::unique_ptr<DecoderLayer>> decoders_;
  std::unique_ptr<layers::Dense> head_;
};

/// Stacked LSTMs (sequences through the penultimate layer, final state from
/// the last), dense ReLU, dropout, dense output.
class LstmModel final : public ForecastModel {
 public:
  explicit LstmModel(const ModelSpec& spec) : ForecastModel(spec) {
    if (spec.kind != ModelKind::lstm) throw ConfigError("LstmModel needs an lstm spec");
    if (spec.lstm_layers == 0) throw ConfigError("lstm model needs at least one layer");
    Rng rng(spec.seed);
    std::size_t in = spec.n_features;
    for (std::size_t i = 0; i < spec.lstm_layers; ++i) {
      const bool sequences = i + 1 < spec.lstm_layers;
      stack_.push_back(std::make_unique<layers::Lstm>("lstm" + std::to_string(i), in, spec.lstm_cells, sequences, rng));
      in = spec.lstm_cells;
    }
    hidden_ = std::make_unique<layers::Dense>("dense", spec.lstm_cells, spec.dense_units, Activation::relu, rng);
    head_ = std::make_unique<layers::Dense>("head", spec.dense_units, spec.horizon, Activation::none, rng);
    for (auto& l : stack_) l->collect(params_);
    hidden_->collect(params_);
    head_->collect(params_);
  }

  Var forward(Tape& tape, Var x, Mode mode, Rng& rng) override {
    check_input(tape, x);
    Var h = x;
    for (auto& l : stack_) h = l->forward(tape, h);
    h = hidden_->forward(tape, h);
    h = ops::dropout(tape, h, spec_.dropout, mode, rng);
    return head_->forward(tape, h);
  }

 private:
  std::vector<std::unique_ptr<layers::Lstm>> stack_;
  std::unique_ptr<layers::Dense> hidden_;
  std::unique_ptr<layers::Dense> head_;
};

/// Conv(width 3, same padding) -> batch norm -> ReLU blocks, global average
/// pooling, dense ReLU, dropout, dense output.
class CnnModel final : public ForecastModel {
 public:
  explicit CnnModel(const ModelSpec& spec) : ForecastModel(spec) {
    if (spec.kind != ModelKind::cnn) throw ConfigError("CnnModel needs a cnn spec");
    Rng rng(spec.seed);
    std::size_t in = spec.n_features;
    for (std::size_t i = 0; i < spec.conv_layers; ++i) {
      const std::string p = "conv" + std::to_string(i);
      blocks_.push_back(std::make_unique<Block>(p, spec.conv_width, in, spec.conv_filters, rng));
      in = spec.conv_filters;
    }
    hidden_ = std::make_unique<layers::Dense>("dense", in, spec.dense_units, Activation::relu, rng);
    head_ = std::make_unique<layers::Dense>("head", spec.dense_units, spec.horizon, Activation::none, rng);
    for (auto& b : blocks_) {
      b->conv.collect(params_);
      b->norm.collect(params_);
    }
    hidden_->collect(params_);
    head_->collect(params_);
  }

  Var forward(Tape& tape, Var x, Mode mode, Rng& rng) override {
    check_input(tape, x);
    Var h = x;
    for (auto& b : blocks_) {
      h = b->conv.forward(tape, h);
      h = b->norm.forward(tape, h, mode);
      h = ops::activate(tape, h, Activation::relu);
    }
    h = ops::mean_over_time(tape, h);
    h = hidden_->forward(tape, h);
    h = ops::dropout(tape, h, spec_.dropout, mode, rng);
    return head_->forward(tape, h);
  }

 private:
  struct Block {
    layers::Conv1d conv;
    layers::BatchNorm norm;
    Block(const std::string& p, std::size_t width, std::size_t in, std::size_t out, Rng& rng)
        : conv(p, width, in, out, rng), norm(p + ".batch_norm", out) {}
  };

  std::vector<std::unique_ptr<Block>> blocks_;
  std::unique_ptr<layers::Dense> hidden_;
  std::unique_ptr<layers::Dense> head_;
};

inline std::unique_ptr<ForecastModel> build_model(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::transformer: return std::make_unique<TransformerModel>(spec);
    case ModelKind::lstm: return std::make_unique<LstmModel>(spec);
    case ModelKind::cnn: return std::make_unique<CnnModel>(spec);
  }
  throw ConfigError("unknown model kind");
}

}  // namespace fedstlf
