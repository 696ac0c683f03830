#pragma once

// Run configuration (JSON, schema "epical-run/1") and the orchestration that
// turns one config into an artifact directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "epical/calibrate.hpp"
#include "epical/io.hpp"
#include "epical/mcmc.hpp"
#include "epical/posterior.hpp"
#include "epical/presets.hpp"

namespace epical {

using nlohmann::json;

inline constexpr const char* run_schema = "epical-run/1";

struct RunConfig {
  // model
  std::string model = "sir";
  std::string variant = "transition";      // seirdplus only
  std::vector<std::string> breakpoint_dates;  // seirdplus; empty = Berlin preset

  // data: either a CSV file or a synthetic spec
  std::string csv;
  std::map<std::string, std::string> rename;
  bool synthetic = false;
  std::map<std::string, double> truth;  // by parameter name
  std::vector<double> synth_y0;
  std::size_t synth_steps = 100;
  std::uint64_t data_seed = 1;
  double population = 1.0;
  std::string start_date = "2020-01-01";
  bool sde_noise = true;
  double rel_noise = 0.0;
  std::vector<std::string> synth_columns;  // empty = all states
  std::map<std::string, std::vector<std::string>> aggregates;

  // fit
  std::vector<std::string> free;
  std::map<std::string, double> fixed;
  std::vector<std::string> fit;  // empty = every known compartment in the data
  std::string loss = "plain";    // plain | weighted
  std::string split_date;        // first projection day; empty = no projection window
  std::vector<double> y0;        // empty = first data row
  std::vector<double> init_lo, init_hi;

  std::string method = "neural";  // neural | mala | grid
  TrainConfig train;
  std::size_t chains = 300;
  MalaConfig mala;
  std::vector<std::size_t> grid_points;  // per free parameter, on [init_lo, init_hi]

  // posterior densities
  std::size_t density_points = 100;
  std::string estimator = "auto";  // auto | joint | conditional | kde
  // predictions
  std::size_t draws = 1000;
  std::string weighting = "likelihood";  // likelihood | uniform
  std::map<std::string, std::string> oracle;  // parameter -> density file

  std::string out = "out";
  std::uint64_t seed = 42;
  std::size_t workers = 1;

  void validate() const {
    if (method != "neural" && method != "mala" && method != "grid") {
      throw ConfigError("method must be neural, mala or grid");
    }
    if (free.empty()) throw ConfigError("fit.free lists no parameters");
    if (init_lo.size() != free.size() || init_hi.size() != free.size()) {
      throw ConfigError("fit.init_lo/init_hi need one entry per free parameter");
    }
    if (csv.empty() == !synthetic) throw ConfigError("data needs exactly one of csv or synthetic");
    if (loss != "plain" && loss != "weighted") throw ConfigError("loss must be plain or weighted");
    if (estimator != "auto" && estimator != "joint" && estimator != "conditional" &&
        estimator != "kde") {
      throw ConfigError("posterior.estimator must be auto, joint, conditional or kde");
    }
    if (weighting != "likelihood" && weighting != "uniform") {
      throw ConfigError("predict.weighting must be likelihood or uniform");
    }
    if (method == "grid" && grid_points.size() != free.size()) {
      throw ConfigError("grid.points needs one entry per free parameter");
    }
    if (density_points < 2) throw ConfigError("posterior.points must be >= 2");
    if (draws < 1) throw ConfigError("predict.draws must be >= 1");
  }
};

namespace detail {

template <class T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

inline const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(std::string("'") + key + "' must be an object");
  return j.at(key);
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.value("schema", std::string()) != run_schema) {
    throw ConfigError(std::string("config schema must be \"") + run_schema + "\"");
  }
  RunConfig c;
  using detail::get;
  using detail::section;
  const auto& m = section(j, "model");
  get(m, "name", c.model);
  get(m, "variant", c.variant);
  get(m, "breakpoint_dates", c.breakpoint_dates);

  const auto& d = section(j, "data");
  get(d, "csv", c.csv);
  get(d, "rename", c.rename);
  get(d, "aggregates", c.aggregates);
  if (d.contains("synthetic")) {
    c.synthetic = true;
    const auto& s = section(d, "synthetic");
    get(s, "truth", c.truth);
    get(s, "y0", c.synth_y0);
    get(s, "steps", c.synth_steps);
    get(s, "seed", c.data_seed);
    get(s, "population", c.population);
    get(s, "start_date", c.start_date);
    get(s, "sde_noise", c.sde_noise);
    get(s, "rel_noise", c.rel_noise);
    get(s, "columns", c.synth_columns);
  }

  const auto& f = section(j, "fit");
  get(f, "free", c.free);
  get(f, "fixed", c.fixed);
  get(f, "observables", c.fit);
  get(f, "loss", c.loss);
  get(f, "split_date", c.split_date);
  get(f, "y0", c.y0);
  get(f, "init_lo", c.init_lo);
  get(f, "init_hi", c.init_hi);

  get(j, "method", c.method);
  get(j, "seed", c.seed);
  get(j, "workers", c.workers);
  get(j, "out", c.out);

  const auto& n = section(j, "neural");
  get(n, "chains", c.chains);
  get(n, "epochs", c.train.epochs);
  get(n, "depth", c.train.net.depth);
  get(n, "width", c.train.net.width);
  if (n.contains("activation")) c.train.net.hidden = activation_from_string(n.at("activation").get<std::string>());
  get(n, "learning_rate", c.train.net.learning_rate);
  get(n, "output_scale", c.train.net.output_scale);
  get(n, "plateau_window", c.train.plateau_window);
  get(n, "plateau_tol", c.train.plateau_tol);
  get(n, "pretrain_tol", c.train.pretrain_tol);
  get(n, "pretrain_lr", c.train.pretrain_lr);
  get(n, "pretrain_max_iterations", c.train.pretrain_max_iterations);

  const auto& a = section(j, "mala");
  get(a, "chains", c.mala.chains);
  get(a, "steps", c.mala.steps);
  get(a, "burn_in", c.mala.burn_in);
  get(a, "thinning", c.mala.thinning);
  get(a, "step_size", c.mala.step_size);
  get(a, "decay", c.mala.decay);
  get(a, "decay_offset", c.mala.decay_offset);
  get(a, "smoothing", c.mala.smoothing);
  get(a, "regularization", c.mala.regularization);
  get(a, "preconditioned", c.mala.preconditioned);
  get(a, "curvature", c.mala.curvature);
  get(a, "freeze_after_burn_in", c.mala.freeze_after_burn_in);

  const auto& g = section(j, "grid");
  get(g, "points", c.grid_points);

  const auto& p = section(j, "posterior");
  get(p, "points", c.density_points);
  get(p, "estimator", c.estimator);
  get(p, "oracle", c.oracle);

  const auto& pr = section(j, "predict");
  get(pr, "draws", c.draws);
  get(pr, "weighting", c.weighting);
  return c;
}

inline json config_to_json(const RunConfig& c) {
  json j;
  j["schema"] = run_schema;
  j["model"] = {{"name", c.model}, {"variant", c.variant}, {"breakpoint_dates", c.breakpoint_dates}};
  json d = json::object();
  if (!c.csv.empty()) d["csv"] = c.csv;
  d["rename"] = c.rename;
  d["aggregates"] = c.aggregates;
  if (c.synthetic) {
    d["synthetic"] = {{"truth", c.truth},         {"y0", c.synth_y0},
                      {"steps", c.synth_steps},   {"seed", c.data_seed},
                      {"population", c.population}, {"start_date", c.start_date},
                      {"sde_noise", c.sde_noise}, {"rel_noise", c.rel_noise},
                      {"columns", c.synth_columns}};
  }
  j["data"] = d;
  j["fit"] = {{"free", c.free},         {"fixed", c.fixed},           {"observables", c.fit},
              {"loss", c.loss},         {"split_date", c.split_date}, {"y0", c.y0},
              {"init_lo", c.init_lo},   {"init_hi", c.init_hi}};
  j["method"] = c.method;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["out"] = c.out;
  const auto& t = c.train;
  j["neural"] = {{"chains", c.chains},
                 {"epochs", t.epochs},
                 {"depth", t.net.depth},
                 {"width", t.net.width},
                 {"activation", to_string(t.net.hidden)},
                 {"learning_rate", t.net.learning_rate},
                 {"output_scale", t.net.output_scale},
                 {"plateau_window", t.plateau_window},
                 {"plateau_tol", t.plateau_tol},
                 {"pretrain_tol", t.pretrain_tol},
                 {"pretrain_lr", t.pretrain_lr},
                 {"pretrain_max_iterations", t.pretrain_max_iterations}};
  const auto& m = c.mala;
  j["mala"] = {{"chains", m.chains},
               {"steps", m.steps},
               {"burn_in", m.burn_in},
               {"thinning", m.thinning},
               {"step_size", m.step_size},
               {"decay", m.decay},
               {"decay_offset", m.decay_offset},
               {"smoothing", m.smoothing},
               {"regularization", m.regularization},
               {"preconditioned", m.preconditioned},
               {"curvature", m.curvature},
               {"freeze_after_burn_in", m.freeze_after_burn_in}};
  j["grid"] = {{"points", c.grid_points}};
  j["posterior"] = {{"points", c.density_points}, {"estimator", c.estimator}, {"oracle", c.oracle}};
  j["predict"] = {{"draws", c.draws}, {"weighting", c.weighting}};
  return j;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---- assembly ---------------------------------------------------------------

inline ModelPtr build_model(const RunConfig& c) {
  if (c.model != "seirdplus") return make_model(c.model);
  std::vector<double> bp = presets::berlin_breakpoints();
  if (!c.breakpoint_dates.empty()) {
    if (c.breakpoint_dates.size() != 6) {
      throw ConfigError("seirdplus needs 6 breakpoint dates (start, 4 changes, end)");
    }
    const int start = parse_date(c.breakpoint_dates.front());
    bp.clear();
    for (std::size_t i = 1; i + 1 < c.breakpoint_dates.size(); ++i) {
      bp.push_back(parse_date(c.breakpoint_dates[i]) - start);
    }
  }
  SeirdPlusModel::Variant v;
  if (c.variant == "transition") {
    v = SeirdPlusModel::Variant::transition;
  } else if (c.variant == "printed") {
    v = SeirdPlusModel::Variant::printed;
  } else {
    throw ConfigError("model.variant must be transition or printed");
  }
  return seirdplus_model(bp, v);
}

inline std::vector<double> full_parameters(const Model& m, const std::map<std::string, double>& named,
                                           const char* what) {
  std::vector<double> p(m.parameter_count(), 0.0);
  std::vector<bool> set(p.size(), false);
  for (const auto& [k, v] : named) {
    const auto i = m.parameter_index(k);
    p[i] = v;
    set[i] = true;
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!set[i] && !m.parameters()[i].allow_zero) {
      throw ConfigError(std::string(what) + " misses parameter '" + m.parameters()[i].name + "'");
    }
  }
  return p;
}

inline SynthSpec synth_spec(const RunConfig& c, ModelPtr model) {
  SynthSpec s;
  s.model = model;
  s.params = full_parameters(*model, c.truth, "data.synthetic.truth");
  s.y0 = c.synth_y0;
  s.steps = c.synth_steps;
  s.seed = c.data_seed;
  s.population = c.population;
  s.start_date = c.start_date;
  s.sde_noise = c.sde_noise;
  s.rel_noise = c.rel_noise;
  if (!c.synth_columns.empty()) s.columns = make_observables(c.synth_columns, c.aggregates);
  return s;
}

inline CompartmentDataset load_dataset(const RunConfig& c, const ModelPtr& model) {
  if (c.synthetic) return synth_generate(synth_spec(c, model));
  return read_dataset_csv(c.csv, c.rename);
}

// Observables the model can produce for the dataset's columns.
inline std::vector<Observable> model_observables(const Model& m, const CompartmentDataset& ds,
                                                 const std::map<std::string, std::vector<std::string>>& agg) {
  std::vector<Observable> out;
  for (const auto& col : ds.columns) {
    if (auto it = agg.find(col); it != agg.end()) {
      out.push_back({col, it->second});
      continue;
    }
    const auto& st = m.states();
    if (std::find(st.begin(), st.end(), col) != st.end()) out.push_back({col, {col}});
  }
  return out;
}

inline std::vector<double> initial_state(const RunConfig& c, const Model& m, const TimeSeries& data) {
  if (!c.y0.empty()) {
    if (c.y0.size() != m.state_count()) throw ConfigError("fit.y0 must give every model state");
    return c.y0;
  }
  if (m.name() == "seirdplus") return presets::seirdplus_initial_state(m, data, 0);
  std::vector<double> y(m.state_count(), 0.0);
  for (std::size_t s = 0; s < y.size(); ++s) {
    if (auto col = data.find(m.states()[s])) y[s] = data.at(0, *col);
  }
  return y;
}

struct Scenario {
  ModelPtr model;
  CompartmentDataset dataset;
  TimeSeries densities;
  std::size_t split = 0;  // first projection row (= rows when none)
  std::vector<Observable> observables;  // everything comparable to the data
  std::optional<CalibrationProblem> problem;
};

inline Scenario build_scenario(const RunConfig& c) {
  c.validate();
  Scenario s;
  s.model = build_model(c);
  s.dataset = load_dataset(c, s.model);
  s.densities = s.dataset.densities();
  require_nonnegative(s.densities);
  s.split = c.split_date.empty() ? s.dataset.rows() : s.dataset.row_of(c.split_date);
  if (s.split < 2) throw ConfigError("calibration window needs at least two days");
  s.observables = model_observables(*s.model, s.dataset, c.aggregates);

  std::vector<std::string> fit = c.fit;
  if (fit.empty()) {
    for (const auto& o : s.observables) fit.push_back(o.label);
  }
  std::vector<Observable> fit_obs;
  for (const auto& l : fit) {
    auto it = std::find_if(s.observables.begin(), s.observables.end(),
                           [&](const Observable& o) { return o.label == l; });
    if (it == s.observables.end()) {
      throw SchemaError("fitted compartment '" + l + "' is not in the data or not produced by the model");
    }
    fit_obs.push_back(*it);
  }
  const auto window = s.densities.slice(0, s.split);
  const LossSpec loss = c.loss == "weighted" ? weighted_loss(window, fit_obs) : plain_loss(fit_obs);

  std::vector<double> base(s.model->parameter_count(), 0.0);
  for (const auto& [k, v] : c.truth) base[s.model->parameter_index(k)] = v;
  for (const auto& [k, v] : c.fixed) base[s.model->parameter_index(k)] = v;
  for (std::size_t i = 0; i < c.free.size(); ++i) {
    base[s.model->parameter_index(c.free[i])] = 0.5 * (c.init_lo[i] + c.init_hi[i]);
  }
  s.problem.emplace(s.model, c.free, base, window, loss, initial_state(c, *s.model, s.densities));
  return s;
}

// ---- run ---------------------------------------------------------------------

struct RunSummary {
  json metrics = json::object();
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

namespace detail {

inline std::vector<double> density_grid(const RunConfig& c, std::size_t i) {
  return linspace(c.init_lo[i], c.init_hi[i], c.density_points);
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  auto f = open_out(p.string());
  f << j.dump(2) << '\n';
}

}  // namespace detail

// Ensemble over the whole data span from the calibration initial state,
// exported per window, plus the residual table. Adds the error metrics to M.
inline void report_predictions(const RunConfig& c, const Scenario& sc,
                               const std::vector<WeightedDraw>& draws,
                               const std::filesystem::path& out, json& M) {
  const auto& prob = *sc.problem;
  // Aggregated observables (e.g. Q) need member paths for their spread.
  bool aggregated = false;
  for (const auto& o : sc.observables) aggregated = aggregated || o.states.size() > 1;
  PredictSpec ps = PredictSpec::from_problem(prob, sc.dataset.rows() - 1);
  const auto ens = predict(ps, draws, c.workers, aggregated);
  M["prediction_members"] = ens.members.size();
  M["prediction_dropped"] = ens.dropped;
  PredictionEnsemble view;
  view.mean = observe(ens.mean, sc.observables);
  if (aggregated) {
    std::vector<double> sd(view.mean.values().size(), 0.0);
    for (std::size_t k = 0; k < ens.trajectories.size(); ++k) {
      const auto o = observe(ens.trajectories[k], sc.observables);
      for (std::size_t v = 0; v < sd.size(); ++v) {
        const double e = o.values()[v] - view.mean.values()[v];
        sd[v] += ens.members[k].weight * e * e;
      }
    }
    for (auto& x : sd) x = std::sqrt(x);
    view.stddev = TimeSeries(view.mean.times(), view.mean.labels(), std::move(sd));
  } else {
    view.stddev = observe(ens.stddev, sc.observables);
  }
  auto window = [&](std::size_t b, std::size_t e) {
    PredictionEnsemble w;
    w.mean = view.mean.slice(b, e);
    w.stddev = view.stddev.slice(b, e);
    return w;
  };
  write_ensemble_csv((out / "ensemble_calibration.csv").string(), window(0, sc.split));
  if (sc.split < sc.dataset.rows()) {
    write_ensemble_csv((out / "ensemble_projection.csv").string(), window(sc.split, sc.dataset.rows()));
  }

  // Averages run over the fitted compartments; every column gets a row.
  auto fitted = [&](const std::string& l) {
    return c.fit.empty() || std::find(c.fit.begin(), c.fit.end(), l) != c.fit.end();
  };
  std::vector<ResidualRow> rows;
  json per = json::object();
  double ac = 0.0, ap = 0.0;
  std::size_t nfit = 0, inside = 0, points = 0;
  for (const auto& o : sc.observables) {
    ResidualRow r;
    r.label = o.label;
    r.calibration = residual(view.mean, sc.densities, o.label, 0, sc.split);
    per[o.label] = {{"calibration", r.calibration.relative}, {"fitted", fitted(o.label)}};
    if (sc.split < sc.dataset.rows()) {
      r.projection = residual(view.mean, sc.densities, o.label, sc.split, sc.dataset.rows());
      per[o.label]["projection"] = r.projection->relative;
    }
    r.fitted = fitted(o.label);
    if (r.fitted) {
      ++nfit;
      ac += r.calibration.relative;
      if (r.projection) ap += r.projection->relative;
    }
    rows.push_back(r);
    const auto mc = view.mean.index_of(o.label), dc = sc.densities.index_of(o.label);
    for (std::size_t t = 0; t < sc.split; ++t) {
      ++points;
      if (std::fabs(sc.densities.at(t, dc) - view.mean.at(t, mc)) <= view.stddev.at(t, mc)) ++inside;
    }
  }
  write_residuals_csv((out / "residuals.csv").string(), rows);
  M["residuals"] = per;
  if (nfit > 0) {
    M["calibration_error"] = ac / static_cast<double>(nfit);
    if (sc.split < sc.dataset.rows()) M["projection_error"] = ap / static_cast<double>(nfit);
  }
  if (points > 0) M["band_coverage"] = static_cast<double>(inside) / static_cast<double>(points);

}

// Runs the configured method and writes every artifact under c.out.
inline RunSummary run(const RunConfig& c) {
  namespace fs = std::filesystem;
  auto sc = build_scenario(c);
  const auto& prob = *sc.problem;
  const fs::path out(c.out);
  fs::create_directories(out);
  detail::write_json(out / "config.json", config_to_json(c));
  write_dataset_csv((out / "data.csv").string(), sc.dataset);
  if (c.synthetic) detail::write_json(out / "data.csv.truth.json", truth_json(synth_spec(c, sc.model)));

  RunSummary sum;
  auto& M = sum.metrics;
  M["schema"] = "epical-summary/1";
  M["method"] = c.method;
  M["model"] = sc.model->name();
  M["parameters"] = c.free;
  M["calibration_rows"] = sc.split;
  M["projection_rows"] = sc.dataset.rows() - sc.split;

  const std::size_t p = c.free.size();
  std::vector<Density1D> dens;
  std::vector<WeightedDraw> draws;

  if (c.method == "neural") {
    auto tc = c.train;
    tc.init_lo = c.init_lo;
    tc.init_hi = c.init_hi;
    const auto res = run_ensemble(prob, tc, c.chains, c.seed, c.workers);
    write_log_csv((out / "log.csv").string(), res.log);
    std::vector<double> ch, ep, fj, pit;
    for (const auto& r : res.chains) {
      ch.push_back(static_cast<double>(r.chain));
      ep.push_back(static_cast<double>(r.loss_curve.size()));
      fj.push_back(r.loss_curve.empty() ? std::numeric_limits<double>::quiet_NaN() : r.loss_curve.back());
      pit.push_back(static_cast<double>(r.pretrain.iterations));
    }
    write_table_csv((out / "chains.csv").string(), {"chain", "epochs_run", "final_J", "pretrain_iterations"},
                    {ch, ep, fj, pit});
    for (const auto& f : res.failures) sum.failures.push_back(f.message);
    M["records"] = res.log.size();
    M["chain_failures"] = res.failures.size();
    std::size_t best = 0;
    for (std::size_t k = 1; k < res.log.size(); ++k) {
      if (res.log.records[k].loss < res.log.records[best].loss) best = k;
    }
    M["best_J"] = res.log.records[best].loss;
    M["best_parameters"] = res.log.records[best].params;

    std::string est = c.estimator;
    if (est == "auto") est = p <= 2 ? "joint" : "conditional";
    M["estimator"] = est;
    if (est == "joint") {
      std::vector<std::vector<double>> axes;
      for (std::size_t i = 0; i < p; ++i) axes.push_back(detail::density_grid(c, i));
      const auto joint = joint_from_log(res.log, axes, 0.25, c.workers);
      for (std::size_t i = 0; i < p; ++i) dens.push_back(joint.marginal(i));
    } else {
      for (std::size_t i = 0; i < p; ++i) {
        dens.push_back(est == "conditional" ? marginal_conditional(res.log, i, detail::density_grid(c, i))
                                            : marginal_weighted_kde(res.log, i, detail::density_grid(c, i)));
      }
    }
    draws = draws_from_log(res.log, c.draws, derive_seed(c.seed, 7),
                           c.weighting == "uniform" ? DrawWeighting::uniform : DrawWeighting::likelihood);
  } else if (c.method == "mala") {
    auto mc = c.mala;
    mc.seed = c.seed;
    mc.init_lo = c.init_lo;
    mc.init_hi = c.init_hi;
    const auto res = run_mala(prob, mc, c.workers);
    write_log_csv((out / "log.csv").string(), res.log);
    write_trace_csv((out / "trace.csv").string(), res.trace);
    write_samples_csv((out / "samples.csv").string(), res.trace);
    for (const auto& f : res.trace.failures) sum.failures.push_back(f.message);
    std::size_t acc = 0, tot = 0;
    for (const auto& ch : res.trace.chains) {
      acc += ch.accepts;
      tot += ch.accepts + ch.rejects;
    }
    M["acceptance_rate"] = tot ? static_cast<double>(acc) / static_cast<double>(tot) : 0.0;
    json gr = json::object();
    std::vector<std::string> hdr{"n"};
    std::vector<std::vector<double>> cols;
    for (std::size_t i = 0; i < p; ++i) {
      const auto chains = res.trace.parameter(i);
      if (chains.size() >= 2 && chains[0].size() >= 10) {
        const auto g = gelman_rubin(chains);
        gr[c.free[i]] = g.degenerate ? json("inf") : json(g.rhat);
        const auto curve = gelman_rubin_curve(chains, 20);
        if (cols.empty()) {
          cols.emplace_back();
          for (const auto& pt : curve) cols[0].push_back(static_cast<double>(pt.n));
        }
        hdr.push_back(c.free[i]);
        cols.emplace_back();
        for (const auto& pt : curve) {
          cols.back().push_back(pt.degenerate ? std::numeric_limits<double>::infinity() : pt.rhat);
        }
      }
    }
    if (!cols.empty()) write_table_csv((out / "gelman_rubin.csv").string(), hdr, cols);
    M["gelman_rubin"] = gr;
    std::vector<std::vector<double>> all;
    for (const auto& ch : res.trace.chains) all.insert(all.end(), ch.samples.begin(), ch.samples.end());
    M["retained_samples"] = all.size();
    for (std::size_t i = 0; i < p; ++i) dens.push_back(kde(res.trace.pooled(i), {}, detail::density_grid(c, i)));
    draws = draws_from_samples(all, c.draws, derive_seed(c.seed, 7));
  } else {
    std::vector<std::vector<double>> axes;
    for (std::size_t i = 0; i < p; ++i) axes.push_back(linspace(c.init_lo[i], c.init_hi[i], c.grid_points[i]));
    const auto grid = grid_search(prob, axes, c.workers);
    write_grid_csv((out / "grid.csv").string(), grid);
    std::size_t flagged = 0;
    for (auto f : grid.flagged()) flagged += f;
    M["flagged_nodes"] = flagged;
    M["mode"] = grid.mode();
    for (std::size_t i = 0; i < p; ++i) dens.push_back(grid.marginal(i));
    draws = draws_from_grid(grid, c.draws, derive_seed(c.seed, 7));
  }

  json dm = json::object();
  for (std::size_t i = 0; i < p; ++i) {
    write_density_csv((out / ("density_" + c.free[i] + ".csv")).string(), dens[i]);
    dm[c.free[i]] = {{"mean", dens[i].mean()}, {"mode", dens[i].mode()}, {"stddev", dens[i].stddev()}};
  }
  M["densities"] = dm;

  json hel = json::object();
  for (const auto& [name, path] : c.oracle) {
    const auto it = std::find(c.free.begin(), c.free.end(), name);
    if (it == c.free.end()) throw ConfigError("oracle for unknown parameter '" + name + "'");
    const auto& mine = dens[static_cast<std::size_t>(it - c.free.begin())];
    const auto ref = read_density_csv(path);
    hel[name] = hellinger(mine, same_grid(mine, ref) ? ref : resample(ref, mine.grid()));
  }
  if (!c.oracle.empty()) M["hellinger"] = hel;

  report_predictions(c, sc, draws, out, M);

  M["status"] = sum.ok() ? "ok" : "partial";
  M["failures"] = sum.failures;
  detail::write_json(out / "summary.json", M);
  return sum;
}

}  // namespace epical
