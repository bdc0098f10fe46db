#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedstlf/core/ops.hpp"
#include "fedstlf/core/tape.hpp"
#include "fedstlf/rng.hpp"

namespace fedstlf::layers {

using ops::Activation;
using ops::Mode;

/// Glorot-style uniform fill: U(-l, l) with l = sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
}

class Dense {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, Activation act, Rng& rng)
      : weight_{name + ".weight", Tensor(Shape{in, out})},
        bias_{name + ".bias", Tensor(Shape{out})},
        act_(act) {
    glorot_uniform(weight_.value, in, out, rng);
  }

  Var forward(Tape& tape, Var x) { return ops::dense(tape, x, tape.param(weight_), tape.param(bias_), act_); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
  Activation act_;
};

class Lstm {
 public:
  Lstm(std::string name, std::size_t in, std::size_t cells, bool return_sequences, Rng& rng)
      : cells_(cells), return_sequences_(return_sequences) {
    if (cells == 0) throw ConfigError("lstm layer '" + name + "' needs at least one cell");
    input_weight_ = {name + ".input_weight", Tensor(Shape{in, 4 * cells})};
    recurrent_weight_ = {name + ".recurrent_weight", Tensor(Shape{cells, 4 * cells})};
    bias_ = {name + ".bias", Tensor(Shape{4 * cells})};
    glorot_uniform(input_weight_.value, in, 4 * cells, rng);
    glorot_uniform(recurrent_weight_.value, cells, 4 * cells, rng);
  }

  Var forward(Tape& tape, Var x) {
    return ops::lstm(tape, x, tape.param(input_weight_), tape.param(recurrent_weight_), tape.param(bias_),
                     return_sequences_);
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&input_weight_);
    out.push_back(&recurrent_weight_);
    out.push_back(&bias_);
  }

  std::size_t cells() const { return cells_; }

 private:
  std::size_t cells_;
  bool return_sequences_;
  Parameter input_weight_;
  Parameter recurrent_weight_;
  Parameter bias_;
};

/// Multi-head attention with learned query/key/value projections into
/// heads*head_size and an output projection back to heads*head_size.
class MultiHeadAttention {
 public:
  MultiHeadAttention(const std::string& name, std::size_t query_dim, std::size_t kv_dim, std::size_t heads,
                     std::size_t head_size, Rng& rng)
      : heads_(heads),
        head_size_(head_size),
        query_(name + ".query", query_dim, heads * head_size, Activation::none, rng),
        key_(name + ".key", kv_dim, heads * head_size, Activation::none, rng),
        value_(name + ".value", kv_dim, heads * head_size, Activation::none, rng),
        output_(name + ".output", heads * head_size, heads * head_size, Activation::none, rng) {
    if (heads == 0 || head_size == 0) throw ConfigError("attention '" + name + "' needs heads, head_size >= 1");
  }

  Var forward(Tape& tape, Var query, Var key_value, Tensor* weights_out = nullptr) {
    return forward(tape, query, key_value, key_value, weights_out);
  }

  Var forward(Tape& tape, Var query, Var key, Var value, Tensor* weights_out = nullptr) {
    if (tape.shape(key)[1] == 0) throw DimensionError("attention over an empty key sequence");
    const Var q = query_.forward(tape, query);
    const Var k = key_.forward(tape, key);
    const Var v = value_.forward(tape, value);
    const Var mixed = ops::attention(tape, q, k, v, heads_, head_size_, weights_out);
    return output_.forward(tape, mixed);
  }

  void collect(std::vector<Parameter*>& out) {
    query_.collect(out);
    key_.collect(out);
    value_.collect(out);
    output_.collect(out);
  }

  Dense& query() { return query_; }
  Dense& key() { return key_; }
  Dense& value() { return value_; }
  Dense& output() { return output_; }

 private:
  std::size_t heads_;
  std::size_t head_size_;
  Dense query_, key_, value_, output_;
};

class LayerNorm {
 public:
  LayerNorm(const std::string& name, std::size_t width)
      : gain_{name + ".gain", Tensor(Shape{width}, 1.0)}, bias_{name + ".bias", Tensor(Shape{width})} {}

  Var forward(Tape& tape, Var x) { return ops::layer_norm(tape, x, tape.param(gain_), tape.param(bias_)); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gain_);
    out.push_back(&bias_);
  }

 private:
  Parameter gain_;
  Parameter bias_;
};

/// Batch normalization over (batch, time) per channel. Running statistics
/// are non-trainable parameters so they travel with the ParameterSet.
class BatchNorm {
 public:
  BatchNorm(const std::string& name, std::size_t channels)
      : gain_{name + ".gain", Tensor(Shape{channels}, 1.0)},
        bias_{name + ".bias", Tensor(Shape{channels})},
        running_mean_{name + ".running_mean", Tensor(Shape{channels}), false},
        running_var_{name + ".running_var", Tensor(Shape{channels}, 1.0), false} {}

  Var forward(Tape& tape, Var x, Mode mode) {
    const Var g = tape.param(gain_);
    const Var b = tape.param(bias_);
    if (mode == Mode::infer) {
      return ops::batch_norm_infer(tape, x, g, b, running_mean_.value, running_var_.value, ops::kBatchNormEpsilon);
    }
    std::vector<double> mean, var;
    const Var y = ops::batch_norm_train(tape, x, g, b, ops::kBatchNormEpsilon, &mean, &var);
    const double m = ops::kBatchNormMomentum;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      running_mean_.value[c] = m * running_mean_.value[c] + (1.0 - m) * mean[c];
      running_var_.value[c] = m * running_var_.value[c] + (1.0 - m) * var[c];
    }
    return y;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gain_);
    out.push_back(&bias_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  const Tensor& running_mean() const { return running_mean_.value; }
  const Tensor& running_var() const { return running_var_.value; }

 private:
  Parameter gain_;
  Parameter bias_;
  Parameter running_mean_;
  Parameter running_var_;
};

class Conv1d {
 public:
  Conv1d(const std::string& name, std::size_t width, std::size_t in, std::size_t out, Rng& rng)
      : kernels_{name + ".kernels", Tensor(Shape{width, in, out})}, bias_{name + ".bias", Tensor(Shape{out})} {
    glorot_uniform(kernels_.value, width * in, width * out, rng);
  }

  Var forward(Tape& tape, Var x) { return ops::conv1d_same(tape, x, tape.param(kernels_), tape.param(bias_)); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&kernels_);
    out.push_back(&bias_);
  }

 private:
  Parameter kernels_;
  Parameter bias_;
};

}  // namespace fedstlf::layers
