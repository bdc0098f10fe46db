#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "fedstlf/core/tape.hpp"
#include "fedstlf/rng.hpp"

namespace fedstlf {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  // Worst coordinate, for diagnostics.
  std::size_t worst_parameter = 0;
  std::size_t worst_index = 0;
  double worst_backprop = 0.0;
  double worst_numeric = 0.0;
  // Coordinates re-measured with a smaller step (see finite_difference_check).
  std::size_t refined = 0;
};

/// Relative error with an absolute floor so coordinates whose true
/// gradient is ~0 compare on an absolute scale. The default floor sits well
/// above central-difference roundoff (~1e-11 at h = 1e-5 on the full
/// models), which otherwise dominates structurally zero gradients such as
/// attention key biases.
inline double relative_gradient_error(double backprop, double numeric, double floor = 1e-6) {
  return std::abs(backprop - numeric) / std::max({std::abs(backprop), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients with central differences
/// (f(p+h) - f(p-h)) / 2h on a seeded random sample of trainable
/// coordinates. `loss_fn` must build a fresh forward pass on the tape it is
/// given and return a scalar node; it has to be deterministic (e.g. reseed
/// any dropout generator inside it).
///
/// A coordinate whose error exceeds `refine_above` is measured again with
/// step h/10 and keeps the smaller error: a stencil straddling a ReLU kink
/// resolves at the smaller step, a wrong backward pass does not.
inline GradCheckResult finite_difference_check(std::span<Parameter* const> params,
                                               const std::function<Var(Tape&)>& loss_fn, double h,
                                               std::size_t samples = 64, std::uint64_t seed = 0,
                                               double refine_above = 1e-4) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    const Var loss = loss_fn(tape);
    tape.backward(loss);
  }

  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    if (!params[pi]->trainable) continue;
    for (std::size_t i = 0; i < params[pi]->value.size(); ++i) all.emplace_back(pi, i);
  }
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> picked;
  if (all.size() <= samples) {
    picked = all;
  } else {
    // Partial Fisher-Yates for a sample without replacement.
    for (std::size_t i = 0; i < samples; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(all.size() - i));
      std::swap(all[i], all[j]);
    }
    picked.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(samples));
  }

  auto eval = [&]() {
    Tape tape;
    return tape.value(loss_fn(tape))[0];
  };

  GradCheckResult result;
  for (auto [pi, i] : picked) {
    Parameter& p = *params[pi];
    auto central = [&](double step) {
      const double original = p.value[i];
      p.value[i] = original + step;
      const double up = eval();
      p.value[i] = original - step;
      const double down = eval();
      p.value[i] = original;
      return (up - down) / (2.0 * step);
    };
    const double analytic = p.grad[i];
    double numeric = central(h);
    double err = relative_gradient_error(analytic, numeric);
    if (err > refine_above) {
      ++result.refined;
      const double fine = central(h / 10.0);
      const double fine_err = relative_gradient_error(analytic, fine);
      if (fine_err < err) {
        err = fine_err;
        numeric = fine;
      }
    }
    if (err > result.max_relative_error || result.coordinates == 0) {
      result.max_relative_error = std::max(err, result.max_relative_error);
      result.worst_parameter = pi;
      result.worst_index = i;
      result.worst_backprop = analytic;
      result.worst_numeric = numeric;
    }
    ++result.coordinates;
  }
  return result;
}

}  // namespace fedstlf
