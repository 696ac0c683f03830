#pragma once

// Dataset ingestion and columnar exports. Every file is CSV with a header row;
// numbers are written with 17 significant digits so a write/read cycle is
// exact.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "epical/calibrate.hpp"
#include "epical/errors.hpp"
#include "epical/integrate.hpp"
#include "epical/loss.hpp"
#include "epical/mcmc.hpp"
#include "epical/models.hpp"
#include "epical/posterior.hpp"
#include "epical/random.hpp"
#include "epical/timeseries.hpp"

namespace epical {

// ---- dates -----------------------------------------------------------------

// Days since 1970-01-01 for an ISO-8601 calendar date (YYYY-MM-DD).
inline int parse_date(const std::string& s) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
    throw SchemaError("bad date '" + s + "' (want YYYY-MM-DD)");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw SchemaError("no such calendar date '" + s + "'");
  return std::chrono::sys_days(ymd).time_since_epoch().count();
}

inline std::string format_date(int days) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days(std::chrono::days(days))};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  if (!s.empty() && s[0] == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw SchemaError("cannot parse number '" + s + "' " + where);
  }
  return v;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  return f;
}

inline std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                       std::vector<std::string>& header) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  std::string line;
  header.clear();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(f, line)) {
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    if (header.empty()) {
      header = split_csv(line);
    } else {
      rows.push_back(split_csv(line));
      if (rows.back().size() != header.size()) {
        throw SchemaError("'" + path + "' line " + std::to_string(rows.size() + 1) + " has " +
                          std::to_string(rows.back().size()) + " fields, header has " +
                          std::to_string(header.size()));
      }
    }
  }
  if (header.empty()) throw SchemaError("'" + path + "' is empty");
  return rows;
}

}  // namespace detail

// ---- compartment datasets --------------------------------------------------

// Daily counts per compartment with the population size on every row.
// Densities are count / N.
struct CompartmentDataset {
  std::vector<int> days;  // days since 1970-01-01, consecutive
  std::vector<double> population;
  std::vector<std::string> columns;
  std::vector<double> counts;  // row-major (day x column)
  std::string provenance;

  std::size_t rows() const noexcept { return days.size(); }
  std::string date(std::size_t r) const { return format_date(days.at(r)); }

  // Time axis counts days from the first row.
  TimeSeries densities() const {
    std::vector<double> t(rows()), v(counts.size());
    for (std::size_t r = 0; r < rows(); ++r) {
      t[r] = static_cast<double>(days[r] - days[0]);
      for (std::size_t c = 0; c < columns.size(); ++c) {
        v[r * columns.size() + c] = counts[r * columns.size() + c] / population[r];
      }
    }
    return TimeSeries(std::move(t), columns, std::move(v));
  }

  // Row index of an ISO date.
  std::size_t row_of(const std::string& iso) const {
    const int d = parse_date(iso);
    if (rows() == 0 || d < days.front() || d > days.back()) {
      throw ConfigError("date " + iso + " lies outside the data range " + date(0) + ".." +
                        date(rows() - 1));
    }
    return static_cast<std::size_t>(d - days.front());
  }

  bool has(const std::string& column) const {
    return std::find(columns.begin(), columns.end(), column) != columns.end();
  }
};

inline void validate_dataset(const CompartmentDataset& ds) {
  if (ds.rows() == 0) throw SchemaError("dataset has no rows");
  if (ds.population.size() != ds.rows() || ds.counts.size() != ds.rows() * ds.columns.size()) {
    throw ShapeError("dataset arrays do not match rows x columns");
  }
  for (std::size_t r = 1; r < ds.rows(); ++r) {
    if (ds.days[r] != ds.days[r - 1] + 1) throw GapError(format_date(ds.days[r]));
  }
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    if (!(ds.population[r] > 0.0)) {
      throw ValueError("row " + std::to_string(r + 1) + ": population must be positive");
    }
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
      const double v = ds.counts[r * ds.columns.size() + c];
      if (!std::isfinite(v) || v < 0.0) {
        throw ValueError("row " + std::to_string(r + 1) + ": " + ds.columns[c] +
                         " must be a nonnegative count");
      }
    }
  }
}

// `rename` maps file column names onto compartment labels; unlisted columns
// keep their names.
inline CompartmentDataset read_dataset_csv(const std::string& path,
                                           const std::map<std::string, std::string>& rename = {}) {
  std::vector<std::string> header;
  const auto rows = detail::read_rows(path, header);
  for (auto& h : header) {
    if (auto it = rename.find(h); it != rename.end()) h = it->second;
  }
  if (header.size() < 3 || header[0] != "date" || header[1] != "N") {
    throw SchemaError("dataset header must start with date,N and name at least one compartment");
  }
  if (rows.empty()) throw SchemaError("'" + path + "' has a header but no rows");
  CompartmentDataset ds;
  ds.columns.assign(header.begin() + 2, header.end());
  ds.provenance = path;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string where = "in row " + std::to_string(r + 1);
    ds.days.push_back(parse_date(rows[r][0]));
    ds.population.push_back(detail::parse_number(rows[r][1], where));
    for (std::size_t c = 2; c < header.size(); ++c) {
      ds.counts.push_back(detail::parse_number(rows[r][c], where));
    }
  }
  validate_dataset(ds);
  return ds;
}

inline void write_dataset_csv(const std::string& path, const CompartmentDataset& ds) {
  validate_dataset(ds);
  auto f = detail::open_out(path);
  f << "date,N";
  for (const auto& c : ds.columns) f << ',' << c;
  f << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    f << ds.date(r) << ',' << fmt(ds.population[r]);
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
      f << ',' << fmt(ds.counts[r * ds.columns.size() + c]);
    }
    f << '\n';
  }
}

// Known compartments present in the file; the fit mask for reduced datasets.
inline std::vector<std::string> fit_mask(const CompartmentDataset& ds) {
  static const std::vector<std::string> known{"S", "E", "I", "R", "SY", "H", "C", "D", "Q"};
  std::vector<std::string> out;
  for (const auto& k : known) {
    if (ds.has(k)) out.push_back(k);
  }
  return out;
}

// ---- synthetic data --------------------------------------------------------

struct SynthSpec {
  ModelPtr model;
  std::vector<double> params;  // full model vector
  std::vector<double> y0;      // densities
  std::size_t steps = 100;     // daily rows after the first
  std::uint64_t seed = 1;
  double population = 1.0;
  std::string start_date = "2020-01-01";
  // SDE noise through the model's diffusion (models that have one).
  bool sde_noise = true;
  // Multiplicative observation noise: x (1 + rel_noise z), z ~ N(0,1), on
  // rows after the first, clipped at 0.
  double rel_noise = 0.0;
  // Exported columns; empty means one per model state.
  std::vector<Observable> columns;
};

inline CompartmentDataset synth_generate(const SynthSpec& spec) {
  if (!spec.model) throw ConfigError("synthetic data needs a model");
  for (double p : spec.params) {
    if (!(p >= 0.0)) throw OutOfSupport("synthetic parameters must be nonnegative");
  }
  const Model& m = *spec.model;
  std::vector<double> inc;
  if (spec.sde_noise && m.stochastic()) {
    inc = NoiseDriver(spec.seed).increments(spec.steps, m.state_count(), 1.0);
  }
  const auto states = integrate(m, spec.params, spec.y0, 1.0, spec.steps, inc).series;
  auto cols = spec.columns;
  if (cols.empty()) cols = make_observables(m.states());
  const auto obs = observe(states, cols);

  CompartmentDataset ds;
  const int d0 = parse_date(spec.start_date);
  Rng rng(derive_seed(spec.seed, 1));
  for (const auto& c : cols) ds.columns.push_back(c.label);
  for (std::size_t r = 0; r < obs.rows(); ++r) {
    ds.days.push_back(d0 + static_cast<int>(r));
    ds.population.push_back(spec.population);
    for (std::size_t c = 0; c < obs.cols(); ++c) {
      double x = obs.at(r, c);
      if (spec.rel_noise > 0.0 && r > 0) x = std::max(0.0, x * (1.0 + spec.rel_noise * standard_normal(rng)));
      ds.counts.push_back(std::max(0.0, x) * spec.population);
    }
  }
  ds.provenance = "synthetic " + m.name() + " seed " + std::to_string(spec.seed);
  validate_dataset(ds);
  return ds;
}

inline nlohmann::json truth_json(const SynthSpec& spec) {
  nlohmann::json j;
  j["schema"] = "epical-truth/1";
  j["model"] = spec.model->name();
  nlohmann::json p = nlohmann::json::object();
  for (std::size_t i = 0; i < spec.params.size(); ++i) {
    p[spec.model->parameters()[i].name] = spec.params[i];
  }
  j["parameters"] = p;
  j["y0"] = spec.y0;
  j["seed"] = spec.seed;
  j["steps"] = spec.steps;
  j["population"] = spec.population;
  j["start_date"] = spec.start_date;
  j["sde_noise"] = spec.sde_noise;
  j["rel_noise"] = spec.rel_noise;
  return j;
}

// Writes <path> and <path>.truth.json.
inline CompartmentDataset synth_write(const SynthSpec& spec, const std::string& path) {
  auto ds = synth_generate(spec);
  write_dataset_csv(path, ds);
  auto f = detail::open_out(path + ".truth.json");
  f << truth_json(spec).dump(2) << '\n';
  return ds;
}

// ---- exports ---------------------------------------------------------------

// chain,epoch,<params...>,J,likelihood
inline void write_log_csv(const std::string& path, const PosteriorLog& log) {
  auto f = detail::open_out(path);
  f << "chain,epoch";
  for (const auto& n : log.names) f << ',' << n;
  f << ",J,likelihood\n";
  for (const auto& r : log.records) {
    f << r.chain << ',' << r.epoch;
    for (double v : r.params) f << ',' << fmt(v);
    f << ',' << fmt(r.loss) << ',' << fmt(r.likelihood) << '\n';
  }
}

inline PosteriorLog read_log_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = detail::read_rows(path, header);
  const std::size_t n = header.size();
  if (n < 5 || header[0] != "chain" || header[1] != "epoch" || header[n - 2] != "J" ||
      header[n - 1] != "likelihood") {
    throw SchemaError("'" + path + "' is not a posterior log");
  }
  PosteriorLog log;
  log.names.assign(header.begin() + 2, header.end() - 2);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string where = "in row " + std::to_string(r + 1);
    std::vector<double> p;
    for (std::size_t c = 2; c + 2 < n; ++c) p.push_back(detail::parse_number(rows[r][c], where));
    log.add(static_cast<std::size_t>(detail::parse_number(rows[r][0], where)),
            static_cast<std::size_t>(detail::parse_number(rows[r][1], where)), std::move(p),
            detail::parse_number(rows[r][n - 2], where));
  }
  return log;
}

// Every MALA step: chain,epoch (step),<params...>,J,likelihood,accepted. The
// row is the chain's position after the step.
inline void write_trace_csv(const std::string& path, const McmcTrace& trace) {
  auto f = detail::open_out(path);
  f << "chain,epoch";
  for (const auto& n : trace.names) f << ',' << n;
  f << ",J,likelihood,accepted\n";
  for (std::size_t c = 0; c < trace.chains.size(); ++c) {
    const auto& ch = trace.chains[c];
    for (std::size_t s = 0; s < ch.path.size(); ++s) {
      f << c << ',' << s;
      for (double v : ch.path[s]) f << ',' << fmt(v);
      const double j = -ch.path_logp[s];
      f << ',' << fmt(j) << ',' << fmt(std::exp(-j)) << ',' << int(ch.path_accepted[s]) << '\n';
    }
  }
}

// Retained samples after burn-in and thinning: chain,index,<params...>,J
inline void write_samples_csv(const std::string& path, const McmcTrace& trace) {
  auto f = detail::open_out(path);
  f << "chain,index";
  for (const auto& n : trace.names) f << ',' << n;
  f << ",J\n";
  for (std::size_t c = 0; c < trace.chains.size(); ++c) {
    const auto& ch = trace.chains[c];
    for (std::size_t s = 0; s < ch.samples.size(); ++s) {
      f << c << ',' << s;
      for (double v : ch.samples[s]) f << ',' << fmt(v);
      f << ',' << fmt(-ch.sample_logp[s]) << '\n';
    }
  }
}

// grid,mass
inline void write_density_csv(const std::string& path, const Density1D& d) {
  auto f = detail::open_out(path);
  f << "grid,mass\n";
  for (std::size_t i = 0; i < d.size(); ++i) f << fmt(d.grid()[i]) << ',' << fmt(d.mass()[i]) << '\n';
}

inline Density1D read_density_csv(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = detail::read_rows(path, header);
  if (header.size() != 2 || header[0] != "grid" || header[1] != "mass") {
    throw SchemaError("'" + path + "' is not a density file (want grid,mass)");
  }
  std::vector<double> g, m;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string where = "in row " + std::to_string(r + 1);
    g.push_back(detail::parse_number(rows[r][0], where));
    m.push_back(detail::parse_number(rows[r][1], where));
  }
  return Density1D(std::move(g), std::move(m));
}

// <axis names...>,mass,flagged
inline void write_grid_csv(const std::string& path, const GridPosterior& post) {
  auto f = detail::open_out(path);
  for (const auto& n : post.names()) f << n << ',';
  f << "mass,flagged\n";
  for (std::size_t k = 0; k < post.node_count(); ++k) {
    for (double x : post.node(k)) f << fmt(x) << ',';
    f << fmt(post.mass()[k]) << ',' << int(post.flagged()[k]) << '\n';
  }
}

// t,<label>_mean,<label>_std,... ; with members, one extra column per member
// and label: <label>_m<k>.
inline void write_ensemble_csv(const std::string& path, const PredictionEnsemble& ens,
                               bool members = false) {
  auto f = detail::open_out(path);
  const auto& labels = ens.mean.labels();
  f << 't';
  for (const auto& l : labels) f << ',' << l << "_mean," << l << "_std";
  if (members) {
    for (std::size_t k = 0; k < ens.trajectories.size(); ++k) {
      for (const auto& l : labels) f << ',' << l << "_m" << k;
    }
  }
  f << '\n';
  for (std::size_t r = 0; r < ens.mean.rows(); ++r) {
    f << fmt(ens.mean.times()[r]);
    for (std::size_t c = 0; c < labels.size(); ++c) {
      f << ',' << fmt(ens.mean.at(r, c)) << ',' << fmt(ens.stddev.at(r, c));
    }
    if (members) {
      for (const auto& tr : ens.trajectories) {
        for (std::size_t c = 0; c < labels.size(); ++c) f << ',' << fmt(tr.at(r, c));
      }
    }
    f << '\n';
  }
}

struct ResidualRow {
  std::string label;
  Residual calibration;
  std::optional<Residual> projection;
  bool fitted = true;  // counted in the average row
};

// compartment,fitted,calibration_raw,calibration_relative,projection_raw,
// projection_relative; last row "average" over the fitted compartments.
inline void write_residuals_csv(const std::string& path, const std::vector<ResidualRow>& rows) {
  auto f = detail::open_out(path);
  f << "compartment,fitted,calibration_raw,calibration_relative,projection_raw,projection_relative\n";
  double ac = 0.0, ap = 0.0;
  std::size_t nc = 0, np = 0;
  for (const auto& r : rows) {
    f << r.label << ',' << (r.fitted ? 1 : 0) << ',' << fmt(r.calibration.raw) << ','
      << fmt(r.calibration.relative) << ',';
    if (r.fitted) {
      ac += r.calibration.relative;
      ++nc;
    }
    if (r.projection) {
      f << fmt(r.projection->raw) << ',' << fmt(r.projection->relative);
      if (r.fitted) {
        ap += r.projection->relative;
        ++np;
      }
    } else {
      f << ',';
    }
    f << '\n';
  }
  if (nc > 0) {
    f << "average,,," << fmt(ac / static_cast<double>(nc)) << ",,";
    if (np > 0) f << fmt(ap / static_cast<double>(np));
    f << '\n';
  }
}

// Columns of (x, y...) with a header.
inline void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                            const std::vector<std::vector<double>>& columns) {
  auto f = detail::open_out(path);
  for (std::size_t c = 0; c < header.size(); ++c) f << (c ? "," : "") << header[c];
  f << '\n';
  const std::size_t n = columns.empty() ? 0 : columns[0].size();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) f << (c ? "," : "") << fmt(columns[c].at(r));
    f << '\n';
  }
}

}  // namespace epical
