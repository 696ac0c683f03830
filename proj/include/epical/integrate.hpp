#pragma once

// Euler-Maruyama integration of dy = f(y; p) dt + g(y; p) dW. Without noise
// increments this is forward Euler on the ODE.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epical/autodiff.hpp"
#include "epical/errors.hpp"
#include "epical/models.hpp"
#include "epical/random.hpp"
#include "epical/timeseries.hpp"

namespace epical {

// Independent standard Gaussian increments per compartment, scaled by sqrt(dt).
class NoiseDriver {
 public:
  explicit NoiseDriver(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  // Row-major (steps x states).
  std::vector<double> increments(std::size_t steps, std::size_t states,
                                 double dt) const {
    Rng rng(seed_);
    const double scale = std::sqrt(dt);
    std::vector<double> out(steps * states);
    for (auto& x : out) x = standard_normal(rng) * scale;
    return out;
  }

 private:
  std::uint64_t seed_;
};

struct IntegrationStats {
  // Noisy runs: state entries clipped back to zero.
  std::size_t clip_events = 0;
  // Noiseless runs: state entries that went negative (left unclipped).
  std::size_t negative_events = 0;
};

template <class T>
struct BasicIntegration {
  BasicTimeSeries<T> series;
  IntegrationStats stats;
};

using Integration = BasicIntegration<double>;
using VarIntegration = BasicIntegration<ad::Var>;

namespace detail {

template <class T>
void check_inputs(const Model& model, std::span<const T> params,
                  std::span<const double> y0, double dt, std::size_t steps,
                  std::span<const double> increments) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("integrate: dt must be positive");
  if (steps < 1) throw DomainError("integrate: need at least one step");
  if (y0.size() != model.state_count()) {
    throw ShapeError("integrate: initial state has " + std::to_string(y0.size()) +
                     " entries, model '" + model.name() + "' has " +
                     std::to_string(model.state_count()));
  }
  for (double v : y0) {
    if (!std::isfinite(v) || v < 0.0) {
      throw DomainError("integrate: initial state must be finite and nonnegative");
    }
  }
  if (params.size() != model.parameter_count()) {
    throw ShapeError("integrate: model '" + model.name() + "' takes " +
                     std::to_string(model.parameter_count()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double v = value_of(params[i]);
    const bool zero_ok = model.parameters()[i].allow_zero;
    if (!std::isfinite(v) || v < 0.0 || (v == 0.0 && !zero_ok)) {
      throw OutOfSupport("parameter '" + model.parameters()[i].name +
                         "' must be positive");
    }
  }
  if (!increments.empty() && increments.size() != steps * model.state_count()) {
    throw ShapeError("integrate: noise increments do not match steps x states");
  }
}

template <class T>
BasicIntegration<T> euler(const Model& model, std::span<const T> params,
                          std::span<const double> y0, double dt,
                          std::size_t steps, std::span<const double> increments,
                          double t0) {
  check_inputs(model, params, y0, dt, steps, increments);
  const std::size_t n = model.state_count();
  const bool noisy = !increments.empty();

  std::vector<double> times(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) times[k] = t0 + static_cast<double>(k) * dt;

  std::vector<T> values;
  values.reserve((steps + 1) * n);
  for (double v : y0) values.push_back(T(v));

  std::vector<T> f(n), g(n);
  IntegrationStats stats;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t row = k + 1;
    try {
      std::span<const T> y(values.data() + k * n, n);
      model.drift(y, params, times[k], std::span<T>(f));
      if (noisy) model.diffusion(y, params, times[k], std::span<T>(g));
      for (std::size_t i = 0; i < n; ++i) {
        T next = values[k * n + i] + dt * f[i];
        if (noisy) {
          next = next + g[i] * increments[k * n + model.noise_channel(i)];
          if (value_of(next) < 0.0) {
            ++stats.clip_events;
            next = clip_nonnegative(next);
          }
        } else if (value_of(next) < 0.0) {
          ++stats.negative_events;
        }
        if (!std::isfinite(value_of(next))) throw BlowUp(row);
        values.push_back(next);
      }
    } catch (const InvalidValue&) {
      throw BlowUp(row);
    }
  }

  return {BasicTimeSeries<T>(std::move(times), model.states(), std::move(values)),
          stats};
}

}  // namespace detail

inline Integration integrate(const Model& model, std::span<const double> params,
                             std::span<const double> y0, double dt,
                             std::size_t steps,
                             std::span<const double> increments = {},
                             double t0 = 0.0) {
  return detail::euler<double>(model, params, y0, dt, steps, increments, t0);
}

inline Integration integrate(const Model& model, std::span<const double> params,
                             std::span<const double> y0, double dt,
                             std::size_t steps, const NoiseDriver& noise,
                             double t0 = 0.0) {
  const auto inc = noise.increments(steps, model.state_count(), dt);
  return detail::euler<double>(model, params, y0, dt, steps, inc, t0);
}

// Differentiable integration. Noise increments, if any, are frozen constants
// (pathwise gradient).
inline VarIntegration integrate_ad(const Model& model,
                                   std::span<const ad::Var> params,
                                   std::span<const double> y0, double dt,
                                   std::size_t steps,
                                   std::span<const double> increments = {},
                                   double t0 = 0.0) {
  return detail::euler<ad::Var>(model, params, y0, dt, steps, increments, t0);
}

}  // namespace epical
