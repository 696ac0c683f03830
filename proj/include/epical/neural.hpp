#pragma once

// Fully connected calibration network u_theta mapping a flattened, normalized
// data window to positive model parameters, plus Adam and pretraining.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epical/autodiff.hpp"
#include "epical/errors.hpp"
#include "epical/random.hpp"
#include "epical/timeseries.hpp"
#include "json.hpp"

namespace epical {

enum class Activation { tanh, sigmoid, abs, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::abs: return "abs";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "abs") return Activation::abs;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

struct NetConfig {
  std::size_t depth = 2;  // hidden layers
  std::size_t width = 20;
  Activation hidden = Activation::tanh;
  double learning_rate = 0.002;
  std::size_t batch = 0;  // time steps per input; 0 means the whole window
  std::uint64_t seed = 0;
  // Per-output multiplier applied after the abs layer. Lets one net emit
  // parameters of very different magnitude. Empty means all ones.
  std::vector<double> output_scale;

  void validate() const {
    if (depth < 1) throw ConfigError("net depth must be >= 1");
    if (width < 1) throw ConfigError("net width must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    for (double s : output_scale) {
      if (!(s > 0.0)) throw ConfigError("output scales must be positive");
    }
  }
};

struct AdamConstants {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;
};

// Net input: the first `batch` rows of the window, each column divided by its
// maximum over the window, flattened row-major. All-zero columns stay zero.
inline std::vector<double> network_input(const TimeSeries& window, std::size_t batch = 0) {
  const std::size_t rows = batch == 0 ? window.rows() : std::min(batch, window.rows());
  std::vector<double> scale(window.cols(), 0.0);
  for (std::size_t r = 0; r < window.rows(); ++r) {
    for (std::size_t c = 0; c < window.cols(); ++c) {
      scale[c] = std::max(scale[c], std::fabs(window.at(r, c)));
    }
  }
  std::vector<double> out;
  out.reserve(rows * window.cols());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < window.cols(); ++c) {
      out.push_back(scale[c] > 0.0 ? window.at(r, c) / scale[c] : 0.0);
    }
  }
  return out;
}

class Mlp {
 public:
  Mlp() = default;

  Mlp(const NetConfig& config, std::size_t inputs, std::size_t outputs) {
    config.validate();
    if (inputs < 1 || outputs < 1) throw ShapeError("net needs inputs and outputs");
    sizes_.push_back(inputs);
    for (std::size_t i = 0; i < config.depth; ++i) {
      sizes_.push_back(config.width);
      activations_.push_back(config.hidden);
    }
    sizes_.push_back(outputs);
    activations_.push_back(Activation::abs);
    scale_ = config.output_scale.empty() ? std::vector<double>(outputs, 1.0)
                                         : config.output_scale;
    if (scale_.size() != outputs) throw ShapeError("output_scale length must equal outputs");
    layout();
    Rng rng(config.seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      for (std::size_t k = offsets_[l]; k < offsets_[l + 1]; ++k) {
        theta_[k] = uniform(rng, -bound, bound);
      }
    }
  }

  // Explicit architecture and weights (snapshot import, tests).
  Mlp(std::vector<std::size_t> sizes, std::vector<Activation> activations,
      std::vector<double> theta, std::vector<double> output_scale = {})
      : sizes_(std::move(sizes)), activations_(std::move(activations)) {
    if (sizes_.size() < 2 || activations_.size() != sizes_.size() - 1) {
      throw ShapeError("need one activation per layer");
    }
    if (activations_.back() != Activation::abs) {
      throw ShapeError("final activation must be abs");
    }
    scale_ = output_scale.empty() ? std::vector<double>(sizes_.back(), 1.0)
                                  : std::move(output_scale);
    if (scale_.size() != sizes_.back()) throw ShapeError("output_scale length must equal outputs");
    layout();
    if (theta.size() != theta_.size()) {
      throw ShapeError("expected " + std::to_string(theta_.size()) + " weights, got " +
                       std::to_string(theta.size()));
    }
    theta_ = std::move(theta);
  }

  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  const std::vector<Activation>& activations() const noexcept { return activations_; }
  const std::vector<double>& output_scale() const noexcept { return scale_; }
  std::size_t inputs() const noexcept { return sizes_.front(); }
  std::size_t outputs() const noexcept { return sizes_.back(); }
  std::size_t weight_count() const noexcept { return theta_.size(); }

  std::span<const double> theta() const noexcept { return theta_; }
  std::span<double> theta() noexcept { return theta_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }
  std::uint64_t step_count() const noexcept { return steps_; }

  std::vector<double> forward(std::span<const double> input) const {
    return forward_t<double>(input, std::span<const double>(theta_));
  }

  // Forward pass with the given weights recorded as tape variables.
  std::vector<ad::Var> forward(std::span<const double> input,
                               std::span<const ad::Var> theta) const {
    if (theta.size() != theta_.size()) throw ShapeError("weight vector size mismatch");
    return forward_t<ad::Var>(input, theta);
  }

  // Vector-Jacobian product: d(seed . u(input)) / d theta by backpropagation.
  std::vector<double> backprop(std::span<const double> input,
                               std::span<const double> seed) const {
    check_input(input);
    if (seed.size() != outputs()) throw ShapeError("seed must have one entry per output");
    const std::size_t L = sizes_.size() - 1;
    std::vector<std::vector<double>> act(L + 1), pre(L);
    act[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < L; ++l) {
      pre[l].resize(sizes_[l + 1]);
      act[l + 1].resize(sizes_[l + 1]);
      for (std::size_t j = 0; j < sizes_[l + 1]; ++j) {
        pre[l][j] = dot(row(l, j), act[l], bias(l, j));
        act[l + 1][j] = apply(activations_[l], pre[l][j]);
      }
    }

    std::vector<double> grad(theta_.size(), 0.0);
    std::vector<double> delta(outputs());
    for (std::size_t j = 0; j < outputs(); ++j) {
      delta[j] = seed[j] * scale_[j] * derivative(activations_[L - 1], pre[L - 1][j], act[L][j]);
    }
    for (std::size_t l = L; l-- > 0;) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      for (std::size_t j = 0; j < out; ++j) {
        const std::size_t w0 = offsets_[l] + j * in;
        for (std::size_t i = 0; i < in; ++i) grad[w0 + i] = delta[j] * act[l][i];
        grad[offsets_[l] + out * in + j] = delta[j];
      }
      if (l == 0) break;
      std::vector<double> next(in, 0.0);
      for (std::size_t j = 0; j < out; ++j) {
        const std::size_t w0 = offsets_[l] + j * in;
        for (std::size_t i = 0; i < in; ++i) next[i] += theta_[w0 + i] * delta[j];
      }
      for (std::size_t i = 0; i < in; ++i) {
        next[i] *= derivative(activations_[l - 1], pre[l - 1][i], act[l][i]);
      }
      delta = std::move(next);
    }
    return grad;
  }

  void adam_step(std::span<const double> grads, double lr) {
    if (grads.size() != theta_.size()) throw ShapeError("gradient size mismatch");
    for (double g : grads) {
      if (!std::isfinite(g)) throw DivergedGradient("non-finite gradient entry");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(AdamConstants::beta1, t);
    const double c2 = 1.0 - std::pow(AdamConstants::beta2, t);
    for (std::size_t k = 0; k < theta_.size(); ++k) {
      const double g = grads[k];
      m_[k] = AdamConstants::beta1 * m_[k] + (1.0 - AdamConstants::beta1) * g;
      v_[k] = AdamConstants::beta2 * v_[k] + (1.0 - AdamConstants::beta2) * (g * g);
      const double mhat = m_[k] / c1;
      const double vhat = v_[k] / c2;
      theta_[k] -= lr * mhat / (std::sqrt(vhat) + AdamConstants::eps);
    }
  }

  void reset_optimizer() {
    std::fill(m_.begin(), m_.end(), 0.0);
    std::fill(v_.begin(), v_.end(), 0.0);
    steps_ = 0;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "epical-mlp/1";
    j["layers"] = sizes_;
    std::vector<std::string> acts;
    for (auto a : activations_) acts.push_back(to_string(a));
    j["activations"] = acts;
    j["output_scale"] = scale_;
    j["theta"] = theta_;
    return j;
  }

  static Mlp from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "epical-mlp/1") {
      throw SchemaError("not an epical-mlp/1 snapshot");
    }
    std::vector<Activation> acts;
    for (const auto& s : j.at("activations")) acts.push_back(activation_from_string(s));
    return Mlp(j.at("layers").get<std::vector<std::size_t>>(), std::move(acts),
               j.at("theta").get<std::vector<double>>(),
               j.at("output_scale").get<std::vector<double>>());
  }

 private:
  void layout() {
    offsets_.assign(1, 0);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(offsets_.back() + sizes_[l + 1] * (sizes_[l] + 1));
    }
    theta_.assign(offsets_.back(), 0.0);
    m_.assign(theta_.size(), 0.0);
    v_.assign(theta_.size(), 0.0);
  }

  void check_input(std::span<const double> input) const {
    if (input.size() != inputs()) {
      throw ShapeError("net expects " + std::to_string(inputs()) + " inputs, got " +
                       std::to_string(input.size()));
    }
  }

  std::span<const double> row(std::size_t l, std::size_t j) const {
    return std::span<const double>(theta_).subspan(offsets_[l] + j * sizes_[l], sizes_[l]);
  }
  double bias(std::size_t l, std::size_t j) const {
    return theta_[offsets_[l] + sizes_[l + 1] * sizes_[l] + j];
  }

  static double apply(Activation a, double z) {
    switch (a) {
      case Activation::tanh: return std::tanh(z);
      case Activation::sigmoid: return sigmoid(z);
      case Activation::abs: return std::fabs(z);
      case Activation::identity: return z;
    }
    return z;
  }
  static ad::Var apply(Activation a, const ad::Var& z) {
    switch (a) {
      case Activation::tanh: return ad::tanh(z);
      case Activation::sigmoid: return ad::sigmoid(z);
      case Activation::abs: return ad::abs(z);
      case Activation::identity: return z;
    }
    return z;
  }
  static double derivative(Activation a, double z, double out) {
    switch (a) {
      case Activation::tanh: return 1.0 - out * out;
      case Activation::sigmoid: return out * (1.0 - out);
      case Activation::abs: return z > 0.0 ? 1.0 : (z < 0.0 ? -1.0 : 0.0);
      case Activation::identity: return 1.0;
    }
    return 1.0;
  }

  template <class T>
  std::vector<T> forward_t(std::span<const double> input, std::span<const T> theta) const {
    check_input(input);
    const std::size_t L = sizes_.size() - 1;
    std::vector<T> cur;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t in = sizes_[l], out = sizes_[l + 1];
      std::vector<T> next(out);
      for (std::size_t j = 0; j < out; ++j) {
        auto w = theta.subspan(offsets_[l] + j * in, in);
        const T& b = theta[offsets_[l] + out * in + j];
        T z = l == 0 ? dot(w, input, b) : dot(w, std::span<const T>(cur), b);
        next[j] = apply(activations_[l], z);
      }
      cur = std::move(next);
    }
    for (std::size_t j = 0; j < cur.size(); ++j) cur[j] = cur[j] * scale_[j];
    return cur;
  }

  std::vector<std::size_t> sizes_;
  std::vector<Activation> activations_;
  std::vector<double> scale_;
  std::vector<std::size_t> offsets_;
  std::vector<double> theta_, m_, v_;
  std::uint64_t steps_ = 0;
};

struct PretrainResult {
  std::size_t iterations = 0;
  double residual = 0.0;
};

// Trains the net until ||(u(input) - target) / scale||_2 < tol, with scale the
// net's output scale. Adam on the squared residual; the optimizer state is
// reset afterwards so calibration starts from fresh moments.
inline PretrainResult pretrain_to(Mlp& net, std::span<const double> target,
                                  std::span<const double> input, double tol,
                                  double lr, std::size_t max_iterations = 10000) {
  if (target.size() != net.outputs()) throw ShapeError("pretrain target size mismatch");
  for (double t : target) {
    if (!(t > 0.0)) throw OutOfSupport("pretrain targets must be positive");
  }
  if (!(tol > 0.0)) throw ConfigError("pretrain tolerance must be positive");
  const auto& scale = net.output_scale();
  PretrainResult res;
  std::vector<double> seed(target.size());
  for (;;) {
    const auto out = net.forward(input);
    double sq = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      const double r = (out[k] - target[k]) / scale[k];
      sq += r * r;
      seed[k] = 2.0 * r / scale[k];
    }
    res.residual = std::sqrt(sq);
    if (res.residual < tol) break;
    if (res.iterations == max_iterations) throw PretrainFailed(res.residual);
    net.adam_step(net.backprop(input, seed), lr);
    ++res.iterations;
  }
  net.reset_optimizer();
  return res;
}

}  // namespace epical
