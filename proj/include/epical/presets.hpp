#pragma once

// Named scenarios: the reference SIR experiment and the Berlin SEIRD+ setup
// (dates, breakpoints, surrogate ground truth).

#include <string>
#include <vector>

#include "epical/calibrate.hpp"
#include "epical/io.hpp"
#include "epical/loss.hpp"
#include "epical/models.hpp"
#include "epical/problem.hpp"

namespace epical::presets {

// ---- SIR -------------------------------------------------------------------

inline SynthSpec sir_reference(std::uint64_t seed = 1) {
  SynthSpec s;
  s.model = sir_model();
  s.params = {0.2, 14.0, 0.1};
  s.y0 = {0.99, 0.01, 0.0};
  s.steps = 100;
  s.seed = seed;
  return s;
}

// beta and tau free, sigma fixed at 0 (noiseless forward model in J), plain
// loss on S, I, R, starting from the first data row.
inline CalibrationProblem sir_problem(const TimeSeries& data, ModelPtr model = sir_model(),
                                      std::vector<std::string> free = {"beta", "tau"}) {
  std::vector<double> base(model->parameter_count(), 0.0);
  base[SirModel::beta] = 0.2;
  base[SirModel::tau] = 14.0;
  const auto obs = make_observables({"S", "I", "R"});
  std::vector<double> y0;
  for (const auto& s : {"S", "I", "R"}) y0.push_back(data.at(0, data.index_of(s)));
  return CalibrationProblem(std::move(model), std::move(free), std::move(base), data,
                            plain_loss(obs), std::move(y0));
}

// Network and initial ranges: beta ~ U[0,1], tau ~ U[1,30], alpha ~ U[0,1].
inline TrainConfig sir_train(bool with_alpha = false) {
  TrainConfig t;
  t.net.depth = 2;
  t.net.width = 20;
  t.net.hidden = Activation::tanh;
  t.net.learning_rate = 0.002;
  t.epochs = 100;
  t.init_lo = {0.0, 1.0};
  t.init_hi = {1.0, 30.0};
  t.net.output_scale = {1.0, 30.0};
  if (with_alpha) {
    t.init_lo.push_back(0.0);
    t.init_hi.push_back(1.0);
    t.net.output_scale.push_back(1.0);
  }
  return t;
}

// ---- Berlin ------------------------------------------------------------------

// Policy-change dates bounding the five exposure-rate intervals.
inline std::vector<std::string> berlin_dates() {
  return {"2020-02-16", "2020-03-12", "2020-03-22", "2020-05-06", "2020-06-15", "2020-10-27"};
}

// Interior breakpoints in days after the first date.
inline std::vector<double> berlin_breakpoints() {
  const auto d = berlin_dates();
  const int start = parse_date(d.front());
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < d.size(); ++i) out.push_back(parse_date(d[i]) - start);
  return out;
}

inline constexpr double berlin_population = 3.6e6;
inline constexpr std::size_t berlin_rows = 255;
inline constexpr std::size_t berlin_calibration_rows = 200;

inline const std::map<std::string, std::vector<std::string>>& berlin_aggregates() {
  static const std::map<std::string, std::vector<std::string>> a{
      {"Q", {"Q_S", "Q_E", "Q_I"}}};
  return a;
}

// The eight fitted compartments (D is not fitted).
inline std::vector<std::string> berlin_fitted() {
  return {"S", "E", "I", "R", "SY", "H", "C", "Q"};
}

// Ground truth for the surrogate dataset, in model parameter order.
inline std::vector<double> berlin_truth() {
  return {0.1, 0.45, 0.18, 0.06, 0.09, 0.16, 0.2, 0.08, 0.05, 0.03, 0.05, 0.02, 1e-5};
}

inline SynthSpec berlin_surrogate(std::uint64_t seed = 2020) {
  SynthSpec s;
  s.model = seirdplus_model(berlin_breakpoints());
  s.params = berlin_truth();
  s.y0.assign(s.model->state_count(), 0.0);
  s.y0[SeirdPlusModel::E] = 2e-5;
  s.y0[SeirdPlusModel::I] = 1e-5;
  s.y0[SeirdPlusModel::S] = 1.0 - 3e-5;
  s.steps = berlin_rows - 1;
  s.seed = seed;
  s.population = berlin_population;
  s.start_date = berlin_dates().front();
  s.rel_noise = 0.05;
  s.columns = make_observables({"S", "E", "I", "R", "SY", "H", "C", "D", "Q"}, berlin_aggregates());
  return s;
}

// Model state from a data row: observed states copied, the Q column split
// over Q_S, Q_E, Q_I in proportion to S:E:I, everything else (CT, lambda_Q,
// unobserved states) zero.
inline std::vector<double> seirdplus_initial_state(const Model& model, const TimeSeries& data,
                                                   std::size_t row = 0) {
  std::vector<double> y(model.state_count(), 0.0);
  for (std::size_t c = 0; c < data.cols(); ++c) {
    const auto& l = data.labels()[c];
    for (std::size_t s = 0; s < model.state_count(); ++s) {
      if (model.states()[s] == l) y[s] = data.at(row, c);
    }
  }
  if (auto q = data.find("Q")) {
    const double S = y[SeirdPlusModel::S], E = y[SeirdPlusModel::E], I = y[SeirdPlusModel::I];
    const double tot = S + E + I;
    const double Q = data.at(row, *q);
    if (tot > 0.0) {
      y[SeirdPlusModel::QS] = Q * S / tot;
      y[SeirdPlusModel::QE] = Q * E / tot;
      y[SeirdPlusModel::QI] = Q * I / tot;
    }
  }
  return y;
}

// All 13 rates free; weighted loss over `fitted` on the calibration window.
inline CalibrationProblem berlin_problem(const TimeSeries& window, std::vector<double> y0,
                                         const std::vector<std::string>& fitted = berlin_fitted()) {
  auto model = seirdplus_model(berlin_breakpoints());
  const auto obs = make_observables(fitted, berlin_aggregates());
  auto loss = weighted_loss(window, obs);
  const auto names = model->parameter_names();
  return CalibrationProblem(model, names, berlin_truth(), window, std::move(loss), std::move(y0));
}

// Three sigmoid layers of 20. Initial values uniform on [0.5, 1.5] x truth and
// outputs scaled to 2 x truth.
inline TrainConfig berlin_train() {
  TrainConfig t;
  t.net.depth = 3;
  t.net.width = 20;
  t.net.hidden = Activation::sigmoid;
  t.net.learning_rate = 0.002;
  t.epochs = 2000;
  for (double v : berlin_truth()) {
    t.init_lo.push_back(0.5 * v);
    t.init_hi.push_back(1.5 * v);
    t.net.output_scale.push_back(2.0 * v);
  }
  return t;
}

}  // namespace epical::presets
