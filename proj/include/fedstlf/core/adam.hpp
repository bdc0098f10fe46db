#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedstlf/core/tape.hpp"
#include "fedstlf/error.hpp"

namespace fedstlf {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for a flat parameter vector.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

/// One bias-corrected Adam step on a flat parameter vector. Any non-finite
/// gradient aborts the step before anything is modified.
inline void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam: non-finite gradient at coordinate " + std::to_string(i));
    }
  }
  if (state.first_moment.empty()) {
    state.first_moment.assign(params.size(), 0.0);
    state.second_moment.assign(params.size(), 0.0);
  } else if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, update has " + std::to_string(params.size()));
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

/// Adam over a model's trainable parameters. Parameters are visited in the
/// given order, so the concatenated moment vectors line up with the
/// model's ParameterSet manifest.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) { state_.config = config; }

  void update(std::span<Parameter* const> params) {
    std::size_t total = 0;
    for (const Parameter* p : params)
      if (p->trainable) total += p->value.size();
    flat_params_.resize(total);
    flat_grads_.resize(total);
    std::size_t off = 0;
    for (const Parameter* p : params) {
      if (!p->trainable) continue;
      const bool has_grad = p->grad.shape() == p->value.shape();
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        flat_params_[off + i] = p->value[i];
        flat_grads_[off + i] = has_grad ? p->grad[i] : 0.0;
      }
      off += p->value.size();
    }
    adam_update(flat_params_, flat_grads_, state_);
    off = 0;
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      std::copy_n(flat_params_.data() + off, p->value.size(), p->value.data());
      off += p->value.size();
    }
  }

  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }

 private:
  AdamState state_;
  std::vector<double> flat_params_;
  std::vector<double> flat_grads_;
};

}  // namespace fedstlf
