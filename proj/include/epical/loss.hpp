#pragma once

#include <cmath>
#include <map>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "epical/autodiff.hpp"
#include "epical/errors.hpp"
#include "epical/timeseries.hpp"

namespace epical {

// A data column and the model states whose sum it observes
// (e.g. Q <- Q_S + Q_E + Q_I).
struct Observable {
  std::string label;
  std::vector<std::string> states;
};

struct LossTerm {
  Observable observable;
  double weight = 1.0;
};

// J = sum_t sum_i alpha_i (yhat_i(t) - y_i(t))^2 over the fitted terms.
// Compartments absent from `terms` contribute nothing.
struct LossSpec {
  enum class Kind { plain, weighted };

  Kind kind = Kind::plain;
  std::vector<LossTerm> terms;

  std::vector<Observable> observables() const {
    std::vector<Observable> out;
    for (const auto& t : terms) out.push_back(t.observable);
    return out;
  }
};

// Observables for `labels`, using `aggregates` where a label is a sum of
// states and the identity mapping otherwise.
inline std::vector<Observable> make_observables(
    const std::vector<std::string>& labels,
    const std::map<std::string, std::vector<std::string>>& aggregates = {}) {
  std::vector<Observable> out;
  for (const auto& l : labels) {
    auto it = aggregates.find(l);
    out.push_back({l, it != aggregates.end() ? it->second : std::vector<std::string>{l}});
  }
  return out;
}

// Trapezoidal integral of each observable's column; alpha_i is its inverse.
inline std::vector<double> loss_weights(const TimeSeries& observed,
                                        const std::vector<Observable>& fit) {
  if (observed.rows() < 2) throw SchemaError("loss weights need at least two rows");
  const double dt = observed.dt();
  std::vector<double> w;
  for (const auto& o : fit) {
    const auto c = observed.index_of(o.label);
    double integral = 0.0;
    for (std::size_t r = 1; r < observed.rows(); ++r) {
      integral += 0.5 * (observed.at(r - 1, c) + observed.at(r, c)) * dt;
    }
    if (!(integral > 0.0)) {
      throw DegenerateWeight("compartment '" + o.label + "' integrates to zero");
    }
    w.push_back(1.0 / integral);
  }
  return w;
}

inline LossSpec plain_loss(const std::vector<Observable>& fit) {
  LossSpec spec;
  spec.kind = LossSpec::Kind::plain;
  for (const auto& o : fit) spec.terms.push_back({o, 1.0});
  return spec;
}

inline LossSpec weighted_loss(const TimeSeries& observed,
                              const std::vector<Observable>& fit) {
  const auto w = loss_weights(observed, fit);
  LossSpec spec;
  spec.kind = LossSpec::Kind::weighted;
  for (std::size_t i = 0; i < fit.size(); ++i) spec.terms.push_back({fit[i], w[i]});
  return spec;
}

// Model-state series projected onto observables (sums of states).
template <class T>
BasicTimeSeries<T> observe(const BasicTimeSeries<T>& states,
                           const std::vector<Observable>& observables) {
  std::vector<std::vector<std::size_t>> idx;
  std::vector<std::string> labels;
  for (const auto& o : observables) {
    std::vector<std::size_t> cols;
    for (const auto& s : o.states) cols.push_back(states.index_of(s));
    idx.push_back(std::move(cols));
    labels.push_back(o.label);
  }
  std::vector<T> values;
  values.reserve(states.rows() * observables.size());
  for (std::size_t r = 0; r < states.rows(); ++r) {
    for (const auto& cols : idx) {
      T acc = states.at(r, cols[0]);
      for (std::size_t k = 1; k < cols.size(); ++k) acc = acc + states.at(r, cols[k]);
      values.push_back(acc);
    }
  }
  return BasicTimeSeries<T>(states.times(), std::move(labels), std::move(values));
}

template <class T>
T compute_loss(const LossSpec& spec, const BasicTimeSeries<T>& predicted,
               const TimeSeries& observed) {
  if (predicted.rows() != observed.rows()) {
    throw SchemaError("predicted and observed series differ in length");
  }
  for (std::size_t r = 0; r < observed.rows(); ++r) {
    const double a = predicted.times()[r], b = observed.times()[r];
    if (std::fabs(a - b) > 1e-9 * std::max(1.0, std::fabs(b))) {
      throw SchemaError("predicted and observed series differ in time points");
    }
  }
  struct Resolved {
    std::vector<std::size_t> pred;
    std::size_t obs;
    double weight;
  };
  std::vector<Resolved> terms;
  for (const auto& t : spec.terms) {
    if (!(t.weight > 0.0)) throw SchemaError("loss weights must be positive");
    Resolved r{{}, observed.index_of(t.observable.label), t.weight};
    for (const auto& s : t.observable.states) r.pred.push_back(predicted.index_of(s));
    if (r.pred.empty()) throw SchemaError("observable '" + t.observable.label + "' has no states");
    terms.push_back(std::move(r));
  }

  if constexpr (std::is_same_v<T, ad::Var>) {
    // One n-ary node for the whole sum: d/dyhat = 2 w diff per state.
    ad::Tape* tape = nullptr;
    for (const auto& v : predicted.values()) {
      if (!v.is_constant()) {
        tape = const_cast<ad::Tape*>(v.tape());
        break;
      }
    }
    if (tape != nullptr) {
      double loss = 0.0;
      const auto first = tape->open();
      for (std::size_t row = 0; row < observed.rows(); ++row) {
        for (const auto& t : terms) {
          double yhat = predicted.at(row, t.pred[0]).value();
          for (std::size_t k = 1; k < t.pred.size(); ++k) {
            yhat = yhat + predicted.at(row, t.pred[k]).value();
          }
          const double diff = yhat - observed.at(row, t.obs);
          loss = loss + t.weight * (diff * diff);
          for (auto c : t.pred) tape->edge(ad::Op::sum, predicted.at(row, c), 2.0 * t.weight * diff);
        }
      }
      return tape->close(ad::Op::sum, loss, first);
    }
  }

  T loss = 0.0;
  for (std::size_t row = 0; row < observed.rows(); ++row) {
    for (const auto& t : terms) {
      T yhat = predicted.at(row, t.pred[0]);
      for (std::size_t k = 1; k < t.pred.size(); ++k) yhat = yhat + predicted.at(row, t.pred[k]);
      const T diff = yhat - observed.at(row, t.obs);
      loss = loss + t.weight * (diff * diff);
    }
  }
  return loss;
}

}  // namespace epical
