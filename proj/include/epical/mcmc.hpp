#pragma once

// Preconditioned Metropolis-adjusted Langevin sampler with an RMSProp-style
// diagonal preconditioner, and Gelman-Rubin diagnostics.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "epical/calibrate.hpp"
#include "epical/errors.hpp"
#include "epical/problem.hpp"
#include "epical/random.hpp"

namespace epical {

// log density and its gradient. Throws OutOfSupport outside the support.
struct LogTarget {
  std::size_t dimension = 0;
  std::vector<std::string> names;
  std::function<std::pair<double, std::vector<double>>(std::span<const double>)> eval;
  bool positive_support = true;
};

// log rho = -J under the flat prior on the positive orthant.
inline std::pair<double, std::vector<double>> log_posterior_and_grad(
    const CalibrationProblem& problem, std::span<const double> lambda) {
  for (double v : lambda) {
    if (!(v > 0.0)) throw OutOfSupport("parameters must be positive (log rho = -inf)");
  }
  auto [j, g] = problem.loss_and_gradient(lambda);
  for (auto& x : g) x = -x;
  return {-j, std::move(g)};
}

inline LogTarget posterior_target(const CalibrationProblem& problem) {
  LogTarget t;
  t.dimension = problem.dimension();
  t.names = problem.free_names();
  t.eval = [&problem](std::span<const double> x) { return log_posterior_and_grad(problem, x); };
  return t;
}

struct MalaConfig {
  std::size_t chains = 50;
  std::size_t steps = 10000;
  std::size_t burn_in = 500;
  std::size_t thinning = 5;
  double step_size = 0.1;    // eps0
  double decay = 0.51;       // eps_i = eps0 (1 + i / decay_offset)^(-decay)
  double decay_offset = 1000.0;
  double smoothing = 0.99;   // EMA rate of squared gradients
  double regularization = 1e-5;
  bool preconditioned = true;
  bool curvature = true;      // include the Gamma term
  bool freeze_after_burn_in = true;  // stop adapting the EMA once sampling starts
  double curvature_step = 1e-5;  // relative step for the Hessian diagonal
  std::uint64_t seed = 0;
  std::vector<double> init_lo, init_hi;

  void validate(std::size_t dimension) const {
    if (chains < 1) throw ConfigError("mala: chains must be >= 1");
    if (burn_in >= steps) throw ConfigError("mala: burn-in must be smaller than steps");
    if (thinning < 1) throw ConfigError("mala: thinning must be >= 1");
    if (!(step_size > 0.0)) throw ConfigError("mala: step size must be positive");
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("mala: decay must lie in [0, 1)");
    if (!(decay_offset > 0.0)) throw ConfigError("mala: decay offset must be positive");
    if (!(smoothing > 0.0 && smoothing < 1.0)) throw ConfigError("mala: smoothing must lie in (0, 1)");
    if (!(regularization > 0.0)) throw ConfigError("mala: regularization must be positive");
    if (init_lo.size() != dimension || init_hi.size() != dimension) {
      throw ConfigError("mala: initial ranges must cover every parameter");
    }
    for (std::size_t i = 0; i < dimension; ++i) {
      if (!(init_hi[i] > init_lo[i])) throw ConfigError("mala: initial ranges must satisfy lo < hi");
    }
  }

  double epsilon(std::size_t i) const {
    return step_size * std::pow(1.0 + static_cast<double>(i) / decay_offset, -decay);
  }

  std::size_t retained_per_chain() const { return (steps - burn_in) / thinning; }
};

struct PreconditionerState {
  std::vector<double> v;  // EMA of squared gradients
  bool primed = false;
  bool frozen = false;
};

namespace detail {

// Local quantities of the Langevin proposal at x. logp, grad and the Hessian
// diagonal depend on x only; G, Gamma and the proposal mean also depend on the
// EMA state and step size and are refreshed by `precondition`.
struct LangevinPoint {
  std::vector<double> x;
  double logp = -std::numeric_limits<double>::infinity();
  std::vector<double> grad, hdiag;
  std::vector<double> G, Gamma, mean;
  bool valid = false;
};

inline bool in_support(const LogTarget& t, std::span<const double> x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
    if (t.positive_support && !(v > 0.0)) return false;
  }
  return true;
}

inline void precondition(LangevinPoint& p, const MalaConfig& cfg,
                         const PreconditionerState& state, double eps) {
  const std::size_t d = p.x.size();
  p.G.assign(d, 1.0);
  p.Gamma.assign(d, 0.0);
  if (cfg.preconditioned) {
    const double a = cfg.smoothing, k = cfg.regularization;
    for (std::size_t i = 0; i < d; ++i) {
      const double g = p.grad[i];
      const double c = state.primed ? 1.0 - a : 1.0;
      const double vi = state.primed ? a * state.v[i] + c * g * g : g * g;
      const double s = std::sqrt(vi);
      p.G[i] = 1.0 / (s + k);
      // d G_ii / d x_i = -c g H_ii / (s (s + k)^2)
      if (cfg.curvature && s > 0.0) {
        const double gamma = -c * g * p.hdiag[i] / (s * (s + k) * (s + k));
        if (std::isfinite(gamma)) p.Gamma[i] = gamma;
      }
    }
  }
  p.mean.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    p.mean[i] = p.x[i] + 0.5 * eps * (p.G[i] * p.grad[i] + p.Gamma[i]);
  }
}

inline LangevinPoint evaluate(const LogTarget& target, const MalaConfig& cfg,
                              const PreconditionerState& state, std::vector<double> x,
                              double eps) {
  LangevinPoint p;
  p.x = std::move(x);
  if (!in_support(target, p.x)) return p;
  try {
    auto [lp, g] = target.eval(p.x);
    if (!std::isfinite(lp)) return p;
    for (double gi : g) {
      if (!std::isfinite(gi)) return p;
    }
    p.logp = lp;
    p.grad = std::move(g);
  } catch (const Error&) {
    return p;
  }
  const std::size_t d = p.x.size();
  p.hdiag.assign(d, 0.0);
  if (cfg.preconditioned && cfg.curvature) {
    // Hessian diagonal by central differences of the gradient.
    for (std::size_t i = 0; i < d; ++i) {
      const double h = cfg.curvature_step * std::max(1.0, std::fabs(p.x[i]));
      auto xp = p.x, xm = p.x;
      xp[i] += h;
      xm[i] -= h;
      if (!in_support(target, xm)) continue;
      try {
        const double gp = target.eval(xp).second[i];
        const double gm = target.eval(xm).second[i];
        const double hii = (gp - gm) / (2.0 * h);
        if (std::isfinite(hii)) p.hdiag[i] = hii;
      } catch (const Error&) {
      }
    }
  }
  precondition(p, cfg, state, eps);
  p.valid = true;
  return p;
}

// log N(y; from.mean, eps * from.G), up to a constant shared by both directions.
inline double log_proposal(const LangevinPoint& from, std::span<const double> y, double eps) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double var = eps * from.G[i];
    const double r = y[i] - from.mean[i];
    acc += -0.5 * r * r / var - 0.5 * std::log(var);
  }
  return acc;
}

inline void update_state(PreconditionerState& s, const MalaConfig& cfg, std::span<const double> g) {
  if (s.frozen) return;
  if (!s.primed) {
    s.v.assign(g.begin(), g.end());
    for (auto& x : s.v) x = x * x;
    s.primed = true;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    s.v[i] = cfg.smoothing * s.v[i] + (1.0 - cfg.smoothing) * g[i] * g[i];
  }
}

}  // namespace detail

struct MalaStep {
  std::vector<double> proposal;
  double proposal_logp = -std::numeric_limits<double>::infinity();
  bool accepted = false;
  bool proposal_valid = false;
};

// One MALA transition from `current` (already evaluated under `state`).
// `current` is replaced by the accepted point; the EMA is updated from the
// gradient at the point the chain ends on.
inline MalaStep mala_step(const LogTarget& target, const MalaConfig& cfg,
                          detail::LangevinPoint& current, PreconditionerState& state,
                          double eps, Rng& rng) {
  if (!(eps > 0.0)) throw DomainError("mala_step: step size must be positive");
  const std::size_t d = current.x.size();
  std::vector<double> y(d);
  for (std::size_t i = 0; i < d; ++i) {
    y[i] = current.mean[i] + std::sqrt(eps * current.G[i]) * standard_normal(rng);
  }
  MalaStep out;
  out.proposal = y;
  auto prop = detail::evaluate(target, cfg, state, y, eps);
  out.proposal_valid = prop.valid;
  out.proposal_logp = prop.logp;
  const double u = uniform(rng, 0.0, 1.0);
  if (prop.valid) {
    const double log_ratio = prop.logp - current.logp + detail::log_proposal(prop, current.x, eps) -
                             detail::log_proposal(current, y, eps);
    if (std::log(u) < log_ratio) {
      out.accepted = true;
      current = std::move(prop);
    }
  }
  detail::update_state(state, cfg, current.grad);
  return out;
}

struct McmcChain {
  std::size_t chain = 0;
  std::vector<std::vector<double>> samples;  // retained, after burn-in and thinning
  std::vector<double> sample_logp;
  std::size_t accepts = 0;
  std::size_t rejects = 0;
  std::size_t invalid_proposals = 0;
  // Every step: position after the step, its log density, and acceptance.
  std::vector<std::vector<double>> path;
  std::vector<double> path_logp;
  std::vector<unsigned char> path_accepted;
  std::vector<double> min_G;  // smallest preconditioner entry per step
};

struct McmcTrace {
  std::vector<std::string> names;
  std::vector<McmcChain> chains;
  std::vector<ChainFailure> failures;

  // Retained samples of parameter i, one vector per chain.
  std::vector<std::vector<double>> parameter(std::size_t i) const {
    std::vector<std::vector<double>> out;
    for (const auto& c : chains) {
      std::vector<double> v;
      for (const auto& s : c.samples) v.push_back(s[i]);
      out.push_back(std::move(v));
    }
    return out;
  }

  std::vector<double> pooled(std::size_t i) const {
    std::vector<double> out;
    for (const auto& c : chains) {
      for (const auto& s : c.samples) out.push_back(s[i]);
    }
    return out;
  }
};

struct MalaResult {
  McmcTrace trace;
  PosteriorLog log;  // every evaluated proposal with J = -log rho
};

inline McmcChain run_mala_chain(const LogTarget& target, const MalaConfig& cfg,
                                std::uint64_t seed, std::size_t chain_id,
                                PosteriorLog* log = nullptr) {
  McmcChain ch;
  ch.chain = chain_id;
  Rng rng(seed);
  PreconditionerState state;
  const std::size_t d = target.dimension;

  detail::LangevinPoint current;
  for (int attempt = 0; attempt < 1000 && !current.valid; ++attempt) {
    std::vector<double> x0(d);
    for (std::size_t i = 0; i < d; ++i) x0[i] = uniform(rng, cfg.init_lo[i], cfg.init_hi[i]);
    current = detail::evaluate(target, cfg, state, x0, cfg.epsilon(0));
  }
  if (!current.valid) throw OutOfSupport("mala: no valid initial point found");
  detail::update_state(state, cfg, current.grad);

  for (std::size_t i = 1; i <= cfg.steps; ++i) {
    // A history-dependent metric that keeps adapting biases the chain, so
    // the retained part runs with the EMA held fixed.
    if (i > cfg.burn_in && cfg.freeze_after_burn_in) state.frozen = true;
    const double eps = cfg.epsilon(i);
    detail::precondition(current, cfg, state, eps);
    const auto step = mala_step(target, cfg, current, state, eps, rng);
    if (step.accepted) {
      ++ch.accepts;
    } else {
      ++ch.rejects;
    }
    if (!step.proposal_valid) ++ch.invalid_proposals;
    if (log != nullptr && step.proposal_valid) log->add(chain_id, i, step.proposal, -step.proposal_logp);
    ch.path.push_back(current.x);
    ch.path_logp.push_back(current.logp);
    ch.path_accepted.push_back(step.accepted ? 1 : 0);
    ch.min_G.push_back(*std::min_element(current.G.begin(), current.G.end()));
    if (i > cfg.burn_in && (i - cfg.burn_in) % cfg.thinning == 0) {
      ch.samples.push_back(current.x);
      ch.sample_logp.push_back(current.logp);
    }
  }
  return ch;
}

inline MalaResult run_mala(const LogTarget& target, const MalaConfig& cfg,
                           std::size_t workers = 1) {
  cfg.validate(target.dimension);
  std::vector<McmcChain> chains(cfg.chains);
  std::vector<PosteriorLog> logs(cfg.chains);
  std::vector<std::optional<ChainFailure>> failed(cfg.chains);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < cfg.chains;) {
      logs[c].names = target.names;
      try {
        chains[c] = run_mala_chain(target, cfg, derive_seed(cfg.seed, c), c, &logs[c]);
      } catch (const std::exception& e) {
        chains[c].chain = c;
        failed[c] = ChainFailure{c, 0, "chain " + std::to_string(c) + ": " + e.what()};
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, cfg.chains));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  MalaResult res;
  res.trace.names = target.names;
  res.log.names = target.names;
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    if (failed[c]) {
      res.trace.failures.push_back(*failed[c]);
      continue;
    }
    res.trace.chains.push_back(std::move(chains[c]));
    res.log.append(logs[c]);
  }
  if (res.trace.chains.empty()) throw EnsembleFailed("all MALA chains failed");
  return res;
}

inline MalaResult run_mala(const CalibrationProblem& problem, MalaConfig cfg,
                           std::size_t workers = 1) {
  return run_mala(posterior_target(problem), cfg, workers);
}

struct GelmanRubin {
  double rhat = std::numeric_limits<double>::infinity();
  bool degenerate = false;  // zero within-chain variance
  double within = 0.0;
  double between = 0.0;
  std::size_t n = 0;

  bool converged(double threshold = 1.2) const { return !degenerate && rhat < threshold; }
};

// Potential scale reduction over the first n samples of every chain.
inline GelmanRubin gelman_rubin(const std::vector<std::vector<double>>& chains,
                                std::size_t n = 0) {
  if (chains.size() < 2) throw ShapeError("gelman_rubin needs at least two chains");
  std::size_t shortest = chains.front().size();
  for (const auto& c : chains) shortest = std::min(shortest, c.size());
  if (n == 0) n = shortest;
  if (n < 2 || n > shortest) throw ShapeError("gelman_rubin: prefix length out of range");
  const double m = static_cast<double>(chains.size());
  const double nd = static_cast<double>(n);
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    const double mu = std::accumulate(c.begin(), c.begin() + n, 0.0) / nd;
    double ss = 0.0;
    for (std::size_t k = 0; k < n; ++k) ss += (c[k] - mu) * (c[k] - mu);
    means.push_back(mu);
    vars.push_back(ss / (nd - 1.0));
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= nd / (m - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  GelmanRubin gr;
  gr.within = w;
  gr.between = b;
  gr.n = n;
  if (!(w > 0.0)) {
    gr.degenerate = true;
    return gr;
  }
  gr.rhat = std::sqrt(((nd - 1.0) / nd * w + b / nd) / w);
  return gr;
}

// R-hat over increasing prefixes: `points` lengths spaced evenly from 10 to
// the shortest chain.
inline std::vector<GelmanRubin> gelman_rubin_curve(const std::vector<std::vector<double>>& chains,
                                                   std::size_t points = 20) {
  std::size_t shortest = chains.empty() ? 0 : chains.front().size();
  for (const auto& c : chains) shortest = std::min(shortest, c.size());
  if (shortest < 10) throw ShapeError("gelman_rubin needs at least 10 samples per chain");
  std::vector<GelmanRubin> out;
  points = std::max<std::size_t>(1, points);
  for (std::size_t k = 1; k <= points; ++k) {
    const std::size_t n =
        points == 1 ? shortest : 10 + (shortest - 10) * (k - 1) / (points - 1);
    if (!out.empty() && out.back().n == n) continue;
    out.push_back(gelman_rubin(chains, n));
  }
  return out;
}

}  // namespace epical
