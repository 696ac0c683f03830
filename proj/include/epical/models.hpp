#pragma once

// Model catalog. Each model implements its drift and diffusion once as a
// template over the scalar type and is exposed through the type-erased Model
// interface for both double and ad::Var arithmetic.

#include <array>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "epical/autodiff.hpp"
#include "epical/errors.hpp"
#include "epical/parameters.hpp"

namespace epical {

struct ParameterInfo {
  std::string name;
  // Noise strengths and perturbation offsets may sit at zero; rates may not.
  bool allow_zero = false;
};

class Model {
 public:
  virtual ~Model() = default;

  virtual const std::string& name() const = 0;
  virtual const std::vector<std::string>& states() const = 0;
  virtual const std::vector<ParameterInfo>& parameters() const = 0;

  virtual void drift(std::span<const double> y, std::span<const double> p,
                     double t, std::span<double> out) const = 0;
  virtual void drift(std::span<const ad::Var> y, std::span<const ad::Var> p,
                     double t, std::span<ad::Var> out) const = 0;

  // Per-state noise amplitude; state i is driven by its own Wiener increment.
  virtual void diffusion(std::span<const double> y, std::span<const double> p,
                         double t, std::span<double> out) const = 0;
  virtual void diffusion(std::span<const ad::Var> y, std::span<const ad::Var> p,
                         double t, std::span<ad::Var> out) const = 0;

  virtual bool stochastic() const = 0;

  // Which compartment's increment drives state i. States sharing a channel
  // see the same dW.
  virtual std::size_t noise_channel(std::size_t i) const { return i; }

  // Sum of all states is invariant under the noiseless and the noisy dynamics.
  virtual bool conserves_total() const { return false; }

  // Groups flat values into named (possibly piecewise) entries.
  virtual ParameterVector make_parameters(std::span<const double> flat) const {
    std::vector<ParameterEntry> entries;
    for (std::size_t i = 0; i < parameters().size(); ++i) {
      entries.push_back({parameters()[i].name, {flat[i]}, {}});
    }
    return ParameterVector(std::move(entries));
  }

  std::size_t state_count() const { return states().size(); }
  std::size_t parameter_count() const { return parameters().size(); }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (const auto& p : parameters()) out.push_back(p.name);
    return out;
  }

  std::size_t state_index(const std::string& s) const {
    for (std::size_t i = 0; i < states().size(); ++i) {
      if (states()[i] == s) return i;
    }
    throw SchemaError("model '" + name() + "' has no state '" + s + "'");
  }

  std::size_t parameter_index(const std::string& p) const {
    for (std::size_t i = 0; i < parameters().size(); ++i) {
      if (parameters()[i].name == p) return i;
    }
    throw SchemaError("model '" + name() + "' has no parameter '" + p + "'");
  }
};

using ModelPtr = std::shared_ptr<const Model>;

namespace detail {

template <class Derived>
class ModelImpl : public Model {
 public:
  void drift(std::span<const double> y, std::span<const double> p, double t,
             std::span<double> out) const override {
    self().template drift_t<double>(y, p, t, out);
  }
  void drift(std::span<const ad::Var> y, std::span<const ad::Var> p, double t,
             std::span<ad::Var> out) const override {
    self().template drift_t<ad::Var>(y, p, t, out);
  }
  void diffusion(std::span<const double> y, std::span<const double> p, double t,
                 std::span<double> out) const override {
    self().template diffusion_t<double>(y, p, t, out);
  }
  void diffusion(std::span<const ad::Var> y, std::span<const ad::Var> p,
                 double t, std::span<ad::Var> out) const override {
    self().template diffusion_t<ad::Var>(y, p, t, out);
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

}  // namespace detail

// dS = -beta S I dt - sigma I dW_S
// dI = (beta S - 1/tau) I dt + sigma I dW_I
// dR = I/tau dt
class SirModel : public detail::ModelImpl<SirModel> {
 public:
  enum State : std::size_t { S, I, R };
  enum Param : std::size_t { beta, tau, sigma };

  const std::string& name() const override { return name_; }
  const std::vector<std::string>& states() const override { return states_; }
  const std::vector<ParameterInfo>& parameters() const override { return params_; }
  bool stochastic() const override { return true; }
  bool conserves_total() const override { return true; }
  // Infection noise enters S and I with opposite sign and the same dW.
  std::size_t noise_channel(std::size_t i) const override { return i == S ? I : i; }

  template <class T>
  void drift_t(std::span<const T> y, std::span<const T> p, double,
               std::span<T> out) const {
    const T infection = p[beta] * y[S] * y[I];
    const T recovery = y[I] / p[tau];
    out[S] = -infection;
    out[I] = infection - recovery;
    out[R] = recovery;
  }

  template <class T>
  void diffusion_t(std::span<const T> y, std::span<const T> p, double,
                   std::span<T> out) const {
    const T amp = p[sigma] * y[I];
    out[S] = -amp;
    out[I] = amp;
    out[R] = T(0.0);
  }

 private:
  std::string name_ = "sir";
  std::vector<std::string> states_{"S", "I", "R"};
  std::vector<ParameterInfo> params_{{"beta"}, {"tau"}, {"sigma", true}};
};

// SIR with 1/(1000 + alpha) added to every compartment's drift; alpha in
// [0, 1] barely moves the dynamics.
class PerturbedSirModel : public detail::ModelImpl<PerturbedSirModel> {
 public:
  enum Param : std::size_t { beta, tau, sigma, alpha };

  const std::string& name() const override { return name_; }
  const std::vector<std::string>& states() const override { return base_.states(); }
  const std::vector<ParameterInfo>& parameters() const override { return params_; }
  bool stochastic() const override { return true; }
  std::size_t noise_channel(std::size_t i) const override { return base_.noise_channel(i); }

  template <class T>
  void drift_t(std::span<const T> y, std::span<const T> p, double t,
               std::span<T> out) const {
    base_.drift_t<T>(y, p.first(3), t, out);
    const T shift = T(1.0) / (T(1000.0) + p[alpha]);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + shift;
  }

  template <class T>
  void diffusion_t(std::span<const T> y, std::span<const T> p, double t,
                   std::span<T> out) const {
    base_.diffusion_t<T>(y, p.first(3), t, out);
  }

 private:
  SirModel base_;
  std::string name_ = "sir_perturbed";
  std::vector<ParameterInfo> params_{
      {"beta"}, {"tau"}, {"sigma", true}, {"alpha", true}};
};

// Extended SEIRD model with contact tracing and quarantine. lambda_Q is an
// auxiliary state driven by the tracing volume CT. The exposure rate
// lambda_E is piecewise constant between breakpoints (days from start).
class SeirdPlusModel : public detail::ModelImpl<SeirdPlusModel> {
 public:
  enum State : std::size_t { S, E, I, R, SY, H, C, D, QS, QE, QI, CT, LQ };
  static constexpr std::size_t exposure_segments = 5;
  enum Param : std::size_t {
    l_S = 0,
    l_E0 = 1,  // l_E0 .. l_E0 + 4
    l_I = 6,
    l_R,
    l_SY,
    l_H,
    l_C,
    l_D,
    l_CT
  };

  // transition: E drains at lambda_I (matches the E -> I edge of the flow
  // diagram). printed: E drains at lambda_E * I as in the printed equation.
  enum class Variant { transition, printed };

  static constexpr double quarantine_rate = 10.25;

  // Interior breakpoints of the Berlin 2020 policy intervals, in days after
  // 2020-02-16: Mar 12, Mar 22, May 6, Jun 15.
  static std::vector<double> berlin_breakpoints() { return {25.0, 35.0, 80.0, 120.0}; }

  explicit SeirdPlusModel(std::vector<double> breakpoints = berlin_breakpoints(),
                          Variant variant = Variant::transition)
      : breakpoints_(std::move(breakpoints)), variant_(variant) {
    if (breakpoints_.size() != exposure_segments - 1) {
      throw SchemaError("SEIRD+ exposure rate needs 4 interior breakpoints");
    }
    for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
      if (!(breakpoints_[i] > breakpoints_[i - 1])) {
        throw SchemaError("exposure breakpoints must increase");
      }
    }
  }

  const std::string& name() const override { return name_; }
  const std::vector<std::string>& states() const override { return states_; }
  const std::vector<ParameterInfo>& parameters() const override { return params_; }
  bool stochastic() const override { return false; }
  const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
  Variant variant() const noexcept { return variant_; }

  ParameterVector make_parameters(std::span<const double> flat) const override {
    std::vector<ParameterEntry> e;
    e.push_back({"lambda_S", {flat[l_S]}, {}});
    e.push_back({"lambda_E",
                 std::vector<double>(flat.begin() + l_E0,
                                     flat.begin() + l_E0 + exposure_segments),
                 breakpoints_});
    const char* rest[] = {"lambda_I", "lambda_R", "lambda_SY", "lambda_H",
                          "lambda_C", "lambda_D", "lambda_CT"};
    for (std::size_t k = 0; k < 7; ++k) e.push_back({rest[k], {flat[l_I + k]}, {}});
    return ParameterVector(std::move(e));
  }

  template <class T>
  void drift_t(std::span<const T> y, std::span<const T> p, double t,
               std::span<T> out) const {
    const T& lE = p[l_E0 + segment_index(breakpoints_, t)];
    const T& lQ = y[LQ];
    const T infection = lE * y[S] * y[I];

    out[S] = -infection + p[l_S] * y[QS] - lQ * y[S];
    if (variant_ == Variant::transition) {
      out[E] = infection - p[l_I] * y[E] - lQ * y[E];
    } else {
      out[E] = infection - lE * y[I] - lQ * y[E];
    }
    out[I] = p[l_I] * y[E] - p[l_R] * y[I] - p[l_SY] * y[I] - lQ * y[I];
    out[R] = p[l_R] * (y[I] + y[SY] + y[H] + y[C] + y[QI]);
    out[SY] = p[l_SY] * (y[QI] + y[I]) - p[l_R] * y[SY] - p[l_H] * y[SY];
    out[H] = p[l_H] * y[SY] - p[l_R] * y[H] - p[l_C] * y[H];
    out[C] = p[l_C] * y[H] - p[l_R] * y[C] - p[l_D] * y[C];
    out[D] = p[l_D] * y[C];
    out[QS] = -p[l_S] * y[QS] + lQ * y[S];
    out[QE] = -p[l_I] * y[QE] + lQ * y[E];
    out[QI] = p[l_I] * y[QE] + lQ * y[I] - p[l_SY] * y[QI] - p[l_R] * y[QI];
    out[CT] = p[l_SY] * y[I] + (p[l_CT] - lQ) * (y[S] + y[E] + y[I]);
    out[LQ] = quarantine_rate * p[l_CT] * y[CT];
  }

  template <class T>
  void diffusion_t(std::span<const T>, std::span<const T>, double,
                   std::span<T> out) const {
    for (auto& o : out) o = T(0.0);
  }

 private:
  std::vector<double> breakpoints_;
  Variant variant_;
  std::string name_ = "seirdplus";
  std::vector<std::string> states_{"S",  "E",   "I",   "R",   "SY", "H",       "C",
                                   "D",  "Q_S", "Q_E", "Q_I", "CT", "lambda_Q"};
  std::vector<ParameterInfo> params_{
      {"lambda_S"},   {"lambda_E_0"}, {"lambda_E_1"}, {"lambda_E_2"}, {"lambda_E_3"},
      {"lambda_E_4"}, {"lambda_I"},   {"lambda_R"},   {"lambda_SY"},  {"lambda_H"},
      {"lambda_C"},   {"lambda_D"},   {"lambda_CT"}};
};

inline ModelPtr sir_model() { return std::make_shared<SirModel>(); }
inline ModelPtr sir_perturbed_model() { return std::make_shared<PerturbedSirModel>(); }
inline ModelPtr seirdplus_model(
    std::vector<double> breakpoints = SeirdPlusModel::berlin_breakpoints(),
    SeirdPlusModel::Variant variant = SeirdPlusModel::Variant::transition) {
  return std::make_shared<SeirdPlusModel>(std::move(breakpoints), variant);
}

// Looks a model up by its catalog name.
inline ModelPtr make_model(const std::string& name,
                           std::vector<double> breakpoints = SeirdPlusModel::berlin_breakpoints(),
                           SeirdPlusModel::Variant variant =
                               SeirdPlusModel::Variant::transition) {
  if (name == "sir") return sir_model();
  if (name == "sir_perturbed") return sir_perturbed_model();
  if (name == "seirdplus") return seirdplus_model(std::move(breakpoints), variant);
  throw ConfigError("unknown model '" + name + "'");
}

}  // namespace epical
