#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epical/autodiff.hpp"
#include "epical/integrate.hpp"
#include "epical/loss.hpp"
#include "epical/models.hpp"
#include "epical/timeseries.hpp"

namespace epical {

// The map from a free-parameter vector to the loss J against one observed
// window: a model with some parameters held fixed, an initial state, and a
// loss specification. Shared by neural training, MALA and the grid oracle.
class CalibrationProblem {
 public:
  CalibrationProblem(ModelPtr model, std::vector<std::string> free_names,
                     std::vector<double> base_parameters, TimeSeries observed,
                     LossSpec loss, std::vector<double> y0,
                     std::vector<double> frozen_noise = {})
      : model_(std::move(model)),
        base_(std::move(base_parameters)),
        observed_(std::move(observed)),
        loss_(std::move(loss)),
        y0_(std::move(y0)),
        noise_(std::move(frozen_noise)) {
    if (base_.size() != model_->parameter_count()) {
      throw ShapeError("base parameter vector does not match model");
    }
    if (observed_.rows() < 2) throw SchemaError("observed window needs at least two rows");
    for (const auto& n : free_names) free_.push_back(model_->parameter_index(n));
    names_ = std::move(free_names);
    if (!noise_.empty() && noise_.size() != steps() * model_->state_count()) {
      throw ShapeError("frozen noise does not match the observed window");
    }
  }

  const Model& model() const noexcept { return *model_; }
  const ModelPtr& model_ptr() const noexcept { return model_; }
  const std::vector<std::string>& free_names() const noexcept { return names_; }
  std::size_t dimension() const noexcept { return free_.size(); }
  const std::vector<double>& base_parameters() const noexcept { return base_; }
  const TimeSeries& observed() const noexcept { return observed_; }
  const LossSpec& loss_spec() const noexcept { return loss_; }
  const std::vector<double>& initial_state() const noexcept { return y0_; }
  const std::vector<double>& frozen_noise() const noexcept { return noise_; }
  double dt() const { return observed_.dt(); }
  std::size_t steps() const noexcept { return observed_.rows() - 1; }
  double t0() const noexcept { return observed_.times().front(); }

  template <class T>
  std::vector<T> assemble(std::span<const T> free_values) const {
    if (free_values.size() != free_.size()) {
      throw ShapeError("expected " + std::to_string(free_.size()) + " free parameters");
    }
    std::vector<T> full;
    full.reserve(base_.size());
    for (double b : base_) full.push_back(T(b));
    for (std::size_t i = 0; i < free_.size(); ++i) full[free_[i]] = free_values[i];
    return full;
  }

  Integration simulate(std::span<const double> free_values) const {
    const auto full = assemble<double>(free_values);
    return integrate(*model_, full, y0_, dt(), steps(), noise_, t0());
  }

  double loss(std::span<const double> free_values) const {
    check_support(free_values);
    return compute_loss(loss_, simulate(free_values).series, observed_);
  }

  // J recorded on the tape of `free_values`.
  ad::Var loss(std::span<const ad::Var> free_values) const {
    for (const auto& v : free_values) {
      if (!(v.value() > 0.0)) throw OutOfSupport("parameters must be positive");
    }
    const auto full = assemble<ad::Var>(free_values);
    const auto run = integrate_ad(*model_, full, y0_, dt(), steps(), noise_, t0());
    return compute_loss(loss_, run.series, observed_);
  }

  // J and dJ/dlambda through one reverse sweep.
  std::pair<double, std::vector<double>> loss_and_gradient(
      std::span<const double> free_values) const {
    check_support(free_values);
    // Reused per thread so the node buffers keep their capacity.
    thread_local ad::Tape tape;
    tape.clear();
    const auto vars = tape.lift(free_values);
    const auto j = loss(std::span<const ad::Var>(vars));
    const auto g = tape.backward(j);
    return {j.value(), g.wrt(vars)};
  }

 private:
  static void check_support(std::span<const double> free_values) {
    for (double v : free_values) {
      if (!(v > 0.0)) throw OutOfSupport("parameters must be positive");
    }
  }

  ModelPtr model_;
  std::vector<std::size_t> free_;
  std::vector<std::string> names_;
  std::vector<double> base_;
  TimeSeries observed_;
  LossSpec loss_;
  std::vector<double> y0_;
  std::vector<double> noise_;
};

}  // namespace epical
