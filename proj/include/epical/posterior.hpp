#pragma once

// Densities, grid-oracle posteriors, marginal estimators over sample logs,
// prediction ensembles and residuals.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "epical/calibrate.hpp"
#include "epical/errors.hpp"
#include "epical/integrate.hpp"
#include "epical/loss.hpp"
#include "epical/problem.hpp"
#include "epical/random.hpp"
#include "epical/timeseries.hpp"

namespace epical {

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n == 0) throw ShapeError("linspace needs at least one point");
  if (n == 1) return {lo};
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  out.back() = hi;
  return out;
}

// Cell width of each grid node: half the distance between its neighbours,
// with the end cells mirrored. A uniform grid gets its spacing everywhere; a
// single node gets width 1.
inline std::vector<double> cell_widths(std::span<const double> grid) {
  const std::size_t n = grid.size();
  if (n == 1) return {1.0};
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i == 0 ? grid[0] - (grid[1] - grid[0]) : grid[i - 1];
    const double right = i + 1 == n ? grid[n - 1] + (grid[n - 1] - grid[n - 2]) : grid[i + 1];
    w[i] = 0.5 * (right - left);
  }
  return w;
}

class Density1D {
 public:
  Density1D() = default;

  // Normalizes `mass` so that sum(mass * width) = 1.
  Density1D(std::vector<double> grid, std::vector<double> mass) : grid_(std::move(grid)) {
    if (grid_.empty() || mass.size() != grid_.size()) {
      throw ShapeError("density needs one mass value per grid point");
    }
    for (std::size_t i = 1; i < grid_.size(); ++i) {
      if (!(grid_[i] > grid_[i - 1])) throw ShapeError("density grid must be strictly increasing");
    }
    widths_ = cell_widths(grid_);
    double total = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      if (!(mass[i] >= 0.0) || !std::isfinite(mass[i])) {
        throw ValueError("density mass must be finite and nonnegative");
      }
      total += mass[i] * widths_[i];
    }
    if (!(total > 0.0)) throw DegenerateLikelihoods("density has zero total mass");
    for (auto& m : mass) m /= total;
    mass_ = std::move(mass);
  }

  const std::vector<double>& grid() const noexcept { return grid_; }
  const std::vector<double>& mass() const noexcept { return mass_; }
  const std::vector<double>& widths() const noexcept { return widths_; }
  std::size_t size() const noexcept { return grid_.size(); }

  double integral() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < mass_.size(); ++i) acc += mass_[i] * widths_[i];
    return acc;
  }
  double mean() const {
    double acc = 0.0;
    for (std::size_t i = 0; i < mass_.size(); ++i) acc += grid_[i] * mass_[i] * widths_[i];
    return acc;
  }
  double stddev() const {
    const double mu = mean();
    double acc = 0.0;
    for (std::size_t i = 0; i < mass_.size(); ++i) {
      acc += (grid_[i] - mu) * (grid_[i] - mu) * mass_[i] * widths_[i];
    }
    return std::sqrt(acc);
  }
  double mode() const {
    return grid_[static_cast<std::size_t>(std::max_element(mass_.begin(), mass_.end()) -
                                          mass_.begin())];
  }

 private:
  std::vector<double> grid_, mass_, widths_;
};

// Linear interpolation onto `grid`, zero outside the source range.
inline Density1D resample(const Density1D& d, std::vector<double> grid) {
  const auto& g = d.grid();
  const auto& m = d.mass();
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double x = grid[k];
    if (g.size() == 1) {
      out[k] = x == g[0] ? m[0] : 0.0;
      continue;
    }
    if (x < g.front() || x > g.back()) continue;
    auto it = std::upper_bound(g.begin(), g.end(), x);
    if (it == g.end()) {
      out[k] = m.back();
      continue;
    }
    const std::size_t j = static_cast<std::size_t>(it - g.begin());
    const double t = (x - g[j - 1]) / (g[j] - g[j - 1]);
    out[k] = (1.0 - t) * m[j - 1] + t * m[j];
  }
  return Density1D(std::move(grid), std::move(out));
}

inline bool same_grid(const Density1D& p, const Density1D& q) {
  if (p.size() != q.size()) return false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p.grid()[i], b = q.grid()[i];
    if (std::fabs(a - b) > 1e-12 * std::max(1.0, std::fabs(a))) return false;
  }
  return true;
}

// 1/2 sum (sqrt p - sqrt q)^2 dx on a shared grid.
inline double hellinger(const Density1D& p, const Density1D& q) {
  if (!same_grid(p, q)) throw GridMismatch("densities live on different grids; resample first");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double r = std::sqrt(p.mass()[i]) - std::sqrt(q.mass()[i]);
    acc += r * r * p.widths()[i];
  }
  return std::clamp(0.5 * acc, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Kernel estimators

struct KdeOptions {
  double bandwidth = 0.0;  // 0 selects Silverman's rule
  bool positive_prior = true;
};

namespace detail {

inline double effective_size(std::span<const double> w) {
  double s = 0.0, s2 = 0.0;
  for (double x : w) {
    s += x;
    s2 += x * x;
  }
  return s2 > 0.0 ? s * s / s2 : 0.0;
}

// Silverman's rule on the weighted spread and the effective sample size,
// floored at the grid spacing.
inline double silverman(std::span<const double> x, std::span<const double> w,
                        std::span<const double> grid) {
  double sw = 0.0, mu = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sw += w[k];
    mu += w[k] * x[k];
  }
  mu /= sw;
  double var = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) var += w[k] * (x[k] - mu) * (x[k] - mu);
  var /= sw;
  const double n = effective_size(w);
  const double h = 1.06 * std::sqrt(var) * std::pow(n, -0.2);
  const double floor = grid.size() > 1 ? (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1)
                                       : 1e-12;
  return std::max(h, floor);
}

inline std::vector<double> likelihood_weights(const PosteriorLog& log) {
  if (log.empty()) throw ShapeError("posterior log is empty");
  double jmin = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& r : log.records) {
    if (r.likelihood > 0.0) any = true;
    jmin = std::min(jmin, r.loss);
  }
  if (!any) throw DegenerateLikelihoods("every stored likelihood exp(-J) is zero");
  std::vector<double> w;
  w.reserve(log.size());
  // exp(-(J - Jmin)) is proportional to exp(-J) and does not underflow.
  for (const auto& r : log.records) w.push_back(std::exp(-(r.loss - jmin)));
  return w;
}

inline void apply_prior(std::span<const double> grid, std::vector<double>& mass, bool positive) {
  if (!positive) return;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0)) mass[i] = 0.0;
  }
}

}  // namespace detail

// Gaussian KDE of `x` with weights `w` (uniform if empty), times the prior.
inline Density1D kde(std::span<const double> x, std::span<const double> w,
                     std::vector<double> grid, KdeOptions opt = {}) {
  if (x.empty()) throw ShapeError("kde needs samples");
  std::vector<double> ones;
  if (w.empty()) {
    ones.assign(x.size(), 1.0);
    w = ones;
  }
  if (w.size() != x.size()) throw ShapeError("one weight per sample");
  const double h = opt.bandwidth > 0.0 ? opt.bandwidth : detail::silverman(x, w, grid);
  std::vector<double> mass(grid.size(), 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (w[k] == 0.0) continue;
      const double z = (grid[i] - x[k]) / h;
      if (z > 40.0 || z < -40.0) continue;
      acc += w[k] * std::exp(-0.5 * z * z);
    }
    mass[i] = acc;
  }
  detail::apply_prior(grid, mass, opt.positive_prior);
  return Density1D(std::move(grid), std::move(mass));
}

// exp(-J)-weighted Gaussian KDE of parameter i over the log records.
inline Density1D marginal_weighted_kde(const PosteriorLog& log, std::size_t i,
                                       std::vector<double> grid, KdeOptions opt = {}) {
  const auto w = detail::likelihood_weights(log);
  const auto x = log.column(i);
  return kde(x, w, std::move(grid), opt);
}

// Conditional expectation of exp(-J) given lambda_i (Nadaraya-Watson
// regression over the records), times the prior. Each record contributes its
// likelihood, not its visit count, so dense sampling near a mode does not
// inflate the mode.
inline Density1D marginal_conditional(const PosteriorLog& log, std::size_t i,
                                      std::vector<double> grid, double bandwidth = 0.0,
                                      bool positive_prior = true) {
  const auto L = detail::likelihood_weights(log);
  const auto x = log.column(i);
  if (!(bandwidth > 0.0)) {
    bandwidth = grid.size() > 1 ? 0.25 * (grid.back() - grid.front()) / static_cast<double>(grid.size() - 1)
                                : 1.0;
  }
  std::vector<double> mass(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    // log-sum-exp over kernel weights so narrow kernels never underflow to 0/0.
    double m = -std::numeric_limits<double>::infinity();
    for (double xk : x) {
      const double z = (grid[g] - xk) / bandwidth;
      m = std::max(m, -0.5 * z * z);
    }
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double z = (grid[g] - x[k]) / bandwidth;
      const double kw = std::exp(-0.5 * z * z - m);
      num += kw * L[k];
      den += kw;
    }
    mass[g] = den > 0.0 ? num / den : 0.0;
  }
  detail::apply_prior(grid, mass, positive_prior);
  return Density1D(std::move(grid), std::move(mass));
}

// ---------------------------------------------------------------------------
// Joint posteriors on rectangular grids

class GridPosterior {
 public:
  GridPosterior() = default;

  // `mass` is row-major over the axes (last axis fastest); it is normalized so
  // that sum(mass * cell volume) = 1.
  GridPosterior(std::vector<std::string> names, std::vector<std::vector<double>> axes,
                std::vector<double> mass, std::string source,
                std::vector<unsigned char> flagged = {})
      : names_(std::move(names)), axes_(std::move(axes)), mass_(std::move(mass)),
        source_(std::move(source)), flagged_(std::move(flagged)) {
    std::size_t total = 1;
    for (const auto& a : axes_) {
      if (a.empty()) throw ShapeError("grid axes must be nonempty");
      total *= a.size();
      widths_.push_back(cell_widths(a));
    }
    if (names_.size() != axes_.size()) throw ShapeError("one name per axis");
    if (mass_.size() != total) throw ShapeError("joint mass does not match the grid");
    if (flagged_.empty()) flagged_.assign(total, 0);
    double z = 0.0;
    for (std::size_t k = 0; k < total; ++k) z += mass_[k] * volume(k);
    if (!(z > 0.0)) throw DegenerateLikelihoods("grid posterior has zero mass");
    for (auto& m : mass_) m /= z;
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<std::vector<double>>& axes() const noexcept { return axes_; }
  const std::vector<double>& mass() const noexcept { return mass_; }
  const std::vector<unsigned char>& flagged() const noexcept { return flagged_; }
  const std::string& source() const noexcept { return source_; }
  std::size_t node_count() const noexcept { return mass_.size(); }

  std::vector<std::size_t> unravel(std::size_t k) const {
    std::vector<std::size_t> idx(axes_.size());
    for (std::size_t d = axes_.size(); d-- > 0;) {
      idx[d] = k % axes_[d].size();
      k /= axes_[d].size();
    }
    return idx;
  }

  std::vector<double> node(std::size_t k) const {
    const auto idx = unravel(k);
    std::vector<double> x(axes_.size());
    for (std::size_t d = 0; d < axes_.size(); ++d) x[d] = axes_[d][idx[d]];
    return x;
  }

  double volume(std::size_t k) const {
    const auto idx = unravel(k);
    double v = 1.0;
    for (std::size_t d = 0; d < axes_.size(); ++d) v *= widths_[d][idx[d]];
    return v;
  }

  Density1D marginal(std::size_t axis) const {
    if (axis >= axes_.size()) throw ShapeError("no such axis");
    std::vector<double> m(axes_[axis].size(), 0.0);
    for (std::size_t k = 0; k < mass_.size(); ++k) {
      const auto idx = unravel(k);
      m[idx[axis]] += mass_[k] * volume(k) / widths_[axis][idx[axis]];
    }
    return Density1D(axes_[axis], std::move(m));
  }

  std::vector<double> mode() const {
    return node(static_cast<std::size_t>(std::max_element(mass_.begin(), mass_.end()) -
                                         mass_.begin()));
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::vector<double>> axes_;
  std::vector<std::vector<double>> widths_;
  std::vector<double> mass_;
  std::string source_;
  std::vector<unsigned char> flagged_;
};

namespace detail {

template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t k = 0; k < n; ++k) f(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < n;) f(k);
    });
  }
  for (auto& t : pool) t.join();
}

inline std::size_t grid_size(const std::vector<std::vector<double>>& axes) {
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.size();
  return total;
}

}  // namespace detail

// Loss at every grid node; joint mass proportional to exp(-J). Nodes outside
// the prior support get zero mass; nodes whose simulation blows up get zero
// mass and are flagged.
inline GridPosterior grid_search(const CalibrationProblem& problem,
                                 std::vector<std::vector<double>> axes,
                                 std::size_t workers = 1) {
  if (axes.size() != problem.dimension()) throw ShapeError("one axis per free parameter");
  const std::size_t total = detail::grid_size(axes);
  if (total > 50'000'000) throw ConfigError("grid too large");
  GridPosterior shape(problem.free_names(), axes, std::vector<double>(total, 1.0), "grid-search");
  std::vector<double> J(total, std::numeric_limits<double>::infinity());
  std::vector<unsigned char> flagged(total, 0);
  detail::parallel_for(total, workers, [&](std::size_t k) {
    const auto x = shape.node(k);
    for (double v : x) {
      if (!(v > 0.0)) return;
    }
    try {
      const double j = problem.loss(x);
      if (std::isfinite(j)) {
        J[k] = j;
      } else {
        flagged[k] = 1;
      }
    } catch (const BlowUp&) {
      flagged[k] = 1;
    } catch (const InvalidValue&) {
      flagged[k] = 1;
    }
  });
  const double jmin = *std::min_element(J.begin(), J.end());
  if (!std::isfinite(jmin)) throw DegenerateLikelihoods("no grid node has finite loss");
  std::vector<double> mass(total);
  for (std::size_t k = 0; k < total; ++k) mass[k] = std::exp(-(J[k] - jmin));
  return GridPosterior(problem.free_names(), std::move(axes), std::move(mass), "grid-search",
                       std::move(flagged));
}

// Joint likelihood on a grid reconstructed from a sample log: each node gets
// the kernel-weighted average of the recorded exp(-J) around it (a smooth
// nearest-neighbour interpolation), times the positive prior. Bandwidth per
// axis is `bandwidth_cells` grid spacings.
inline GridPosterior joint_from_log(const PosteriorLog& log, std::vector<std::vector<double>> axes,
                                    double bandwidth_cells = 0.25, std::size_t workers = 1) {
  const std::size_t d = axes.size();
  if (d != log.names.size()) throw ShapeError("one axis per logged parameter");
  const auto L = detail::likelihood_weights(log);
  std::vector<double> h(d);
  for (std::size_t a = 0; a < d; ++a) {
    const auto& ax = axes[a];
    h[a] = ax.size() > 1 ? bandwidth_cells * (ax.back() - ax.front()) / static_cast<double>(ax.size() - 1)
                         : 1.0;
  }
  // Records in kernel units.
  const std::size_t n = log.size();
  std::vector<double> pts(n * d);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t a = 0; a < d; ++a) pts[k * d + a] = log.records[k].params[a] / h[a];
  }
  const std::size_t total = detail::grid_size(axes);
  GridPosterior shape(log.names, axes, std::vector<double>(total, 1.0), "log");
  std::vector<double> mass(total, 0.0);
  detail::parallel_for(total, workers, [&](std::size_t g) {
    const auto x = shape.node(g);
    for (double v : x) {
      if (!(v > 0.0)) return;
    }
    std::vector<double> xs(d);
    for (std::size_t a = 0; a < d; ++a) xs[a] = x[a] / h[a];
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> q(n);
    for (std::size_t k = 0; k < n; ++k) {
      double s = 0.0;
      for (std::size_t a = 0; a < d; ++a) {
        const double z = xs[a] - pts[k * d + a];
        s += z * z;
      }
      q[k] = s;
      best = std::min(best, s);
    }
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = 0.5 * (q[k] - best);
      if (e > 700.0) continue;
      const double kw = std::exp(-e);
      num += kw * L[k];
      den += kw;
    }
    mass[g] = num / den;
  });
  return GridPosterior(log.names, std::move(axes), std::move(mass), "log");
}

// ---------------------------------------------------------------------------
// Prediction ensembles

struct WeightedDraw {
  std::vector<double> params;
  double weight = 1.0;
};

enum class DrawWeighting { likelihood, uniform };

// n records chosen uniformly at random (without replacement while possible),
// weighted by exp(-J) or equally.
inline std::vector<WeightedDraw> draws_from_log(const PosteriorLog& log, std::size_t n,
                                                std::uint64_t seed,
                                                DrawWeighting weighting = DrawWeighting::likelihood) {
  const auto L = detail::likelihood_weights(log);
  Rng rng(seed);
  std::vector<std::size_t> idx(log.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<WeightedDraw> out;
  out.reserve(n);
  while (out.size() < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size() && out.size() < n; ++k) {
      const auto& r = log.records[idx[k]];
      out.push_back({r.params, weighting == DrawWeighting::likelihood ? L[idx[k]] : 1.0});
    }
  }
  return out;
}

// n grid nodes drawn with probability mass * cell volume; equal weights.
inline std::vector<WeightedDraw> draws_from_grid(const GridPosterior& post, std::size_t n,
                                                 std::uint64_t seed) {
  std::vector<double> p(post.node_count());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = post.mass()[k] * post.volume(k);
  std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
  Rng rng(seed);
  std::vector<WeightedDraw> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({post.node(pick(rng)), 1.0});
  return out;
}

inline std::vector<WeightedDraw> draws_from_samples(const std::vector<std::vector<double>>& samples,
                                                    std::size_t n, std::uint64_t seed) {
  if (samples.empty()) throw ShapeError("no samples to draw from");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::vector<WeightedDraw> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({samples[pick(rng)], 1.0});
  return out;
}

struct PredictionEnsemble {
  TimeSeries mean;
  TimeSeries stddev;
  std::vector<WeightedDraw> members;  // surviving draws, weights normalized
  std::vector<TimeSeries> trajectories;  // kept only when requested
  std::size_t dropped = 0;
};

struct PredictSpec {
  ModelPtr model;
  std::vector<std::string> free_names;
  std::vector<double> base_parameters;
  std::vector<double> y0;
  double dt = 1.0;
  std::size_t steps = 1;
  double t0 = 0.0;

  static PredictSpec from_problem(const CalibrationProblem& p, std::size_t steps) {
    return {p.model_ptr(), p.free_names(), p.base_parameters(), p.initial_state(),
            p.dt(), steps, p.t0()};
  }
};

// Noiseless trajectories for every draw; weighted mean and pointwise standard
// deviation. Members that blow up are dropped and the rest renormalized.
inline PredictionEnsemble predict(const PredictSpec& spec, std::vector<WeightedDraw> draws,
                                  std::size_t workers = 1, bool keep_trajectories = false) {
  if (draws.empty()) throw ShapeError("predict needs at least one draw");
  const Model& model = *spec.model;
  std::vector<std::size_t> free_idx;
  for (const auto& n : spec.free_names) free_idx.push_back(model.parameter_index(n));
  std::vector<std::optional<TimeSeries>> runs(draws.size());
  detail::parallel_for(draws.size(), workers, [&](std::size_t k) {
    auto full = spec.base_parameters;
    for (std::size_t i = 0; i < free_idx.size(); ++i) full[free_idx[i]] = draws[k].params.at(i);
    try {
      runs[k] = integrate(model, full, spec.y0, spec.dt, spec.steps, {}, spec.t0).series;
    } catch (const BlowUp&) {
    } catch (const OutOfSupport&) {
    }
  });

  PredictionEnsemble ens;
  double wsum = 0.0;
  for (std::size_t k = 0; k < draws.size(); ++k) {
    if (!(draws[k].weight >= 0.0)) throw ValueError("draw weights must be nonnegative");
    if (runs[k]) wsum += draws[k].weight;
  }
  if (!(wsum > 0.0)) throw EnsembleFailed("no prediction member survived with positive weight");

  const TimeSeries* first = nullptr;
  for (auto& r : runs) {
    if (r) {
      first = &*r;
      break;
    }
  }
  const std::size_t cells = first->values().size();
  std::vector<double> mean(cells, 0.0), sq(cells, 0.0);
  for (std::size_t k = 0; k < draws.size(); ++k) {
    if (!runs[k]) {
      ++ens.dropped;
      continue;
    }
    const double w = draws[k].weight / wsum;
    const auto& v = runs[k]->values();
    for (std::size_t c = 0; c < cells; ++c) mean[c] += w * v[c];
    ens.members.push_back({draws[k].params, w});
    if (keep_trajectories) ens.trajectories.push_back(*runs[k]);
  }
  for (std::size_t k = 0; k < draws.size(); ++k) {
    if (!runs[k]) continue;
    const double w = draws[k].weight / wsum;
    const auto& v = runs[k]->values();
    for (std::size_t c = 0; c < cells; ++c) sq[c] += w * (v[c] - mean[c]) * (v[c] - mean[c]);
  }
  for (auto& s : sq) s = std::sqrt(s);
  ens.mean = TimeSeries(first->times(), first->labels(), std::move(mean));
  ens.stddev = TimeSeries(first->times(), first->labels(), std::move(sq));
  return ens;
}

struct Residual {
  std::string label;
  double raw = 0.0;       // sqrt(mean_t (prediction - data)^2)
  double relative = 0.0;  // raw / mean_t data
};

// Rows [begin, end) of both series, matched by time.
inline Residual residual(const TimeSeries& prediction, const TimeSeries& data,
                         const std::string& label, std::size_t begin, std::size_t end) {
  if (end <= begin) throw EmptyWindow("residual window is empty");
  if (end > data.rows()) throw EmptyWindow("residual window exceeds the data");
  const std::size_t pc = prediction.index_of(label), dc = data.index_of(label);
  double se = 0.0, level = 0.0;
  for (std::size_t r = begin; r < end; ++r) {
    const double t = data.times()[r];
    const double pos = (t - prediction.times().front()) / prediction.dt();
    const auto pr = static_cast<std::size_t>(std::llround(pos));
    if (pos < -1e-9 || pr >= prediction.rows() ||
        std::fabs(prediction.times()[pr] - t) > 1e-9 * std::max(1.0, std::fabs(t))) {
      throw EmptyWindow("prediction does not cover time " + std::to_string(t));
    }
    const double e = prediction.at(pr, pc) - data.at(r, dc);
    se += e * e;
    level += data.at(r, dc);
  }
  const double n = static_cast<double>(end - begin);
  Residual res;
  res.label = label;
  res.raw = std::sqrt(se / n);
  level /= n;
  res.relative = level > 0.0 ? res.raw / level : std::numeric_limits<double>::infinity();
  return res;
}

}  // namespace epical
