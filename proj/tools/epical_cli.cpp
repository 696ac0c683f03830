// Command-line front end. Exit status: 0 ok, 1 usage, 2 data error,
// 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "epical/epical.hpp"

namespace {

using namespace epical;

constexpr int kOk = 0, kUsage = 1, kData = 2, kNumerical = 3;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains, epochs, workers;
  std::optional<std::string> out;

  RunConfig load() const {
    auto c = load_config(config);
    if (seed) c.seed = *seed;
    if (chains) {
      c.chains = *chains;
      c.mala.chains = *chains;
    }
    if (epochs) c.train.epochs = *epochs;
    if (workers) c.workers = *workers;
    if (out) c.out = *out;
    return c;
  }
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--chains", o.chains, "number of chains");
  cmd->add_option("--epochs", o.epochs, "epochs per neural chain");
  cmd->add_option("--workers", o.workers, "worker threads");
  cmd->add_option("--out", o.out, "output directory");
}

int finish(const RunSummary& s, const RunConfig& c) {
  std::cout << s.metrics.dump(2) << '\n';
  std::cerr << "artifacts in " << c.out << '\n';
  for (const auto& f : s.failures) std::cerr << "failure: " << f << '\n';
  return s.ok() ? kOk : kNumerical;
}

int cmd_generate(const Overrides& o) {
  auto c = o.load();
  if (!c.synthetic) throw ConfigError("generate needs a data.synthetic section");
  if (o.seed) c.data_seed = *o.seed;
  const std::string path = o.out ? *o.out : "data.csv";
  const auto model = build_model(c);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const auto ds = synth_write(synth_spec(c, model), path);
  std::cout << "wrote " << ds.rows() << " rows to " << path << " (+ .truth.json)\n";
  return kOk;
}

int cmd_predict(const Overrides& o, const std::string& log_path, std::size_t draws) {
  auto c = o.load();
  if (draws > 0) c.draws = draws;
  const auto sc = build_scenario(c);
  const auto log = read_log_csv(log_path);
  if (log.names != c.free) throw SchemaError("log parameters do not match fit.free");
  std::filesystem::create_directories(c.out);
  json m = json::object();
  const auto d = draws_from_log(log, c.draws, derive_seed(c.seed, 7),
                                c.weighting == "uniform" ? DrawWeighting::uniform : DrawWeighting::likelihood);
  report_predictions(c, sc, d, c.out, m);
  std::cout << m.dump(2) << '\n';
  return kOk;
}

// Gelman-Rubin per parameter from a trace or samples file (grouped by chain).
int cmd_diagnose(const std::string& path, const std::string& out) {
  std::vector<std::string> header;
  const auto rows = detail::read_rows(path, header);
  if (header.size() < 4 || header[0] != "chain") throw SchemaError("'" + path + "' is not a trace");
  std::size_t end = header.size();
  while (end > 2 && (header[end - 1] == "J" || header[end - 1] == "likelihood" ||
                     header[end - 1] == "accepted")) {
    --end;
  }
  std::map<long, std::vector<std::vector<double>>> by_chain;
  for (const auto& r : rows) {
    std::vector<double> v;
    for (std::size_t c = 2; c < end; ++c) v.push_back(detail::parse_number(r[c], "in trace"));
    by_chain[static_cast<long>(detail::parse_number(r[0], "in trace"))].push_back(std::move(v));
  }
  json res = json::object();
  std::vector<std::string> hdr{"n"};
  std::vector<std::vector<double>> cols;
  for (std::size_t i = 0; i + 2 < end; ++i) {
    std::vector<std::vector<double>> chains;
    for (const auto& [id, samples] : by_chain) {
      chains.emplace_back();
      for (const auto& s : samples) chains.back().push_back(s[i]);
    }
    const auto g = gelman_rubin(chains);
    res[header[i + 2]] = {{"rhat", g.degenerate ? json("inf") : json(g.rhat)},
                          {"converged", g.converged()},
                          {"within", g.within},
                          {"between", g.between}};
    const auto curve = gelman_rubin_curve(chains);
    if (cols.empty()) {
      cols.emplace_back();
      for (const auto& pt : curve) cols[0].push_back(static_cast<double>(pt.n));
    }
    hdr.push_back(header[i + 2]);
    cols.emplace_back();
    for (const auto& pt : curve) cols.back().push_back(pt.degenerate ? INFINITY : pt.rhat);
  }
  if (!out.empty()) write_table_csv(out, hdr, cols);
  std::cout << res.dump(2) << '\n';
  return kOk;
}

int cmd_compare(const std::string& a, const std::string& b) {
  const auto p = read_density_csv(a);
  auto q = read_density_csv(b);
  if (!same_grid(p, q)) q = resample(q, p.grid());
  std::printf("%.17g\n", hellinger(p, q));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epical: calibration and uncertainty quantification for compartmental epidemic models"};
  app.require_subcommand(1);

  Overrides gen, cal, grid, pred;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset and its .truth.json sidecar");
  add_common(g, gen);

  auto* c = app.add_subcommand("calibrate", "neural or MALA calibration as configured");
  add_common(c, cal);

  auto* s = app.add_subcommand("grid-search", "grid oracle posterior over the free parameters");
  add_common(s, grid);

  std::string log_path;
  std::size_t draws = 0;
  auto* p = app.add_subcommand("predict", "prediction ensemble and residuals from a posterior log");
  add_common(p, pred);
  p->add_option("--log", log_path, "posterior log (log.csv)")->required()->check(CLI::ExistingFile);
  p->add_option("--draws", draws, "number of draws (default from config)");

  std::string trace, diag_out;
  auto* d = app.add_subcommand("diagnose", "Gelman-Rubin statistics of an MCMC trace");
  d->add_option("--trace", trace, "trace.csv or samples.csv")->required()->check(CLI::ExistingFile);
  d->add_option("--out", diag_out, "write the R-hat curve here");

  std::string da, db;
  auto* m = app.add_subcommand("compare", "Hellinger distance between two density files");
  m->add_option("first", da, "density (grid,mass)")->required()->check(CLI::ExistingFile);
  m->add_option("second", db, "density (grid,mass)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen);
    if (c->parsed()) {
      auto cfg = cal.load();
      if (cfg.method == "grid") throw ConfigError("use grid-search for method grid");
      return finish(run(cfg), cfg);
    }
    if (s->parsed()) {
      auto cfg = grid.load();
      cfg.method = "grid";
      return finish(run(cfg), cfg);
    }
    if (p->parsed()) return cmd_predict(pred, log_path, draws);
    if (d->parsed()) return cmd_diagnose(trace, diag_out);
    if (m->parsed()) return cmd_compare(da, db);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.category()) {
      case Error::Category::usage: return kUsage;
      case Error::Category::data: return kData;
      case Error::Category::numerical: return kNumerical;
    }
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
  return kUsage;
}
