#pragma once

// Neural calibration: each epoch feeds the observed window through the net,
// simulates the model at the predicted parameters, and backpropagates the
// loss through the integrator into the weights. Every evaluated parameter
// point is logged with its loss.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "epical/errors.hpp"
#include "epical/neural.hpp"
#include "epical/problem.hpp"
#include "epical/random.hpp"

namespace epical {

struct PosteriorRecord {
  std::size_t chain = 0;
  std::size_t epoch = 0;
  std::vector<double> params;
  double loss = 0.0;
  double likelihood = 1.0;  // exp(-loss)
};

struct PosteriorLog {
  std::vector<std::string> names;
  std::vector<PosteriorRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  void add(std::size_t chain, std::size_t epoch, std::vector<double> params, double loss) {
    records.push_back({chain, epoch, std::move(params), loss, std::exp(-loss)});
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return i;
    }
    throw SchemaError("log has no parameter '" + name + "'");
  }

  std::vector<double> column(std::size_t i) const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.params.at(i));
    return out;
  }
  std::vector<double> losses() const {
    std::vector<double> out;
    for (const auto& r : records) out.push_back(r.loss);
    return out;
  }

  void sort() {
    std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
      return a.chain != b.chain ? a.chain < b.chain : a.epoch < b.epoch;
    });
  }

  void append(const PosteriorLog& other) {
    if (names.empty()) names = other.names;
    if (other.names != names) throw SchemaError("cannot merge logs over different parameters");
    records.insert(records.end(), other.records.begin(), other.records.end());
  }
};

enum class Termination { max_epochs, plateau };

inline std::string to_string(Termination t) {
  return t == Termination::plateau ? "plateau" : "max-epochs";
}

struct TrainConfig {
  NetConfig net;
  std::size_t epochs = 100;
  // Stop when the best loss improved by less than plateau_tol (relative) over
  // the last plateau_window epochs.
  std::size_t plateau_window = 20;
  double plateau_tol = 1e-12;
  // Pretraining targets are drawn uniformly from [init_lo, init_hi].
  std::vector<double> init_lo, init_hi;
  double pretrain_tol = 1e-3;
  double pretrain_lr = 0.01;
  std::size_t pretrain_max_iterations = 10000;

  void validate(std::size_t dimension) const {
    net.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (init_lo.size() != dimension || init_hi.size() != dimension) {
      throw ConfigError("initial ranges must cover every free parameter");
    }
    for (std::size_t i = 0; i < dimension; ++i) {
      if (!(init_lo[i] >= 0.0 && init_hi[i] > init_lo[i])) {
        throw ConfigError("initial ranges must satisfy 0 <= lo < hi");
      }
    }
    if (!net.output_scale.empty() && net.output_scale.size() != dimension) {
      throw ConfigError("output_scale must have one entry per free parameter");
    }
  }
};

struct ChainResult {
  std::size_t chain = 0;
  std::uint64_t seed = 0;
  std::vector<double> initial_params;
  std::vector<double> final_params;
  std::vector<double> loss_curve;
  Termination reason = Termination::max_epochs;
  PretrainResult pretrain;
};

struct ChainFailure {
  std::size_t chain = 0;
  std::size_t epoch = 0;
  std::string message;
};

struct ChainOutput {
  ChainResult result;
  PosteriorLog fragment;
  std::optional<ChainFailure> failure;
};

namespace detail {

inline bool plateaued(const std::vector<double>& curve, std::size_t window, double tol) {
  if (window == 0 || curve.size() <= window) return false;
  const std::size_t e = curve.size() - 1;
  const double before = *std::min_element(curve.begin(), curve.begin() + (e - window) + 1);
  const double now = *std::min_element(curve.begin(), curve.end());
  if (before == 0.0) return true;
  return (before - now) / std::fabs(before) < tol;
}

}  // namespace detail

// One chain. A numerical failure mid-training ends the chain; the records
// evaluated so far are kept and the failure is reported alongside them.
inline ChainOutput train_chain_checked(const CalibrationProblem& problem,
                                       const TrainConfig& config, std::uint64_t seed,
                                       std::size_t chain_id = 0) {
  const std::size_t p = problem.dimension();
  config.validate(p);
  ChainOutput out;
  out.result.chain = chain_id;
  out.result.seed = seed;
  out.fragment.names = problem.free_names();

  NetConfig net_cfg = config.net;
  net_cfg.seed = derive_seed(seed, 0);
  const auto input = network_input(problem.observed(), net_cfg.batch);
  Mlp net(net_cfg, input.size(), p);

  Rng rng(derive_seed(seed, 1));
  std::vector<double> target(p);
  for (std::size_t i = 0; i < p; ++i) {
    do {
      target[i] = uniform(rng, config.init_lo[i], config.init_hi[i]);
    } while (!(target[i] > 0.0));
  }
  // Residual is measured in output-scale units; this bounds every raw
  // coordinate's error by pretrain_tol.
  const double scale_tol = config.pretrain_tol / *std::max_element(net.output_scale().begin(),
                                                                   net.output_scale().end());
  out.result.pretrain = pretrain_to(net, target, input, scale_tol, config.pretrain_lr,
                                    config.pretrain_max_iterations);

  std::size_t epoch = 0;
  try {
    for (; epoch < config.epochs; ++epoch) {
      auto lambda = net.forward(input);
      if (epoch == 0) out.result.initial_params = lambda;
      auto [j, grad] = problem.loss_and_gradient(lambda);
      if (!std::isfinite(j)) throw InvalidValue("non-finite loss");
      out.fragment.add(chain_id, epoch, lambda, j);
      out.result.loss_curve.push_back(j);
      out.result.final_params = lambda;
      if (detail::plateaued(out.result.loss_curve, config.plateau_window, config.plateau_tol)) {
        out.result.reason = Termination::plateau;
        break;
      }
      if (epoch + 1 == config.epochs) break;
      net.adam_step(net.backprop(input, grad), net_cfg.learning_rate);
    }
  } catch (const Error& e) {
    out.failure = ChainFailure{chain_id, epoch,
                               "chain " + std::to_string(chain_id) + " epoch " +
                                   std::to_string(epoch) + ": " + e.what()};
  }
  return out;
}

// As above, but a failure is raised as DivergedGradient naming chain and epoch.
inline ChainOutput train_chain(const CalibrationProblem& problem, const TrainConfig& config,
                               std::uint64_t seed, std::size_t chain_id = 0) {
  auto out = train_chain_checked(problem, config, seed, chain_id);
  if (out.failure) throw DivergedGradient(out.failure->message);
  return out;
}

struct EnsembleResult {
  PosteriorLog log;
  std::vector<ChainResult> chains;  // successful and failed, in chain order
  std::vector<ChainFailure> failures;
};

inline std::uint64_t chain_seed(std::uint64_t master, std::size_t chain) {
  return derive_seed(master, chain);
}

// Chains run on `workers` threads; results are merged in chain order, so the
// pooled log does not depend on scheduling.
inline EnsembleResult run_ensemble(const CalibrationProblem& problem, const TrainConfig& config,
                                   std::size_t chains, std::uint64_t master_seed,
                                   std::size_t workers = 1) {
  if (chains < 1) throw ConfigError("need at least one chain");
  config.validate(problem.dimension());
  std::vector<ChainOutput> outputs(chains);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < chains;) {
      try {
        outputs[c] = train_chain_checked(problem, config, chain_seed(master_seed, c), c);
      } catch (const std::exception& e) {
        outputs[c].result.chain = c;
        outputs[c].failure = ChainFailure{c, 0, "chain " + std::to_string(c) + ": " + e.what()};
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, chains));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  EnsembleResult res;
  res.log.names = problem.free_names();
  for (auto& o : outputs) {
    res.log.append(o.fragment.names.empty() ? PosteriorLog{res.log.names, {}} : o.fragment);
    if (o.failure) res.failures.push_back(*o.failure);
    res.chains.push_back(std::move(o.result));
  }
  if (res.failures.size() == chains) {
    throw EnsembleFailed("all " + std::to_string(chains) + " chains failed; first: " +
                         res.failures.front().message);
  }
  return res;
}

}  // namespace epical
