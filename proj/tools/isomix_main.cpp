#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "isomix/csv.hpp"
#include "isomix/data.hpp"
#include "isomix/diagnostics.hpp"
#include "isomix/model.hpp"
#include "isomix/plot.hpp"
#include "isomix/sampler.hpp"
#include "isomix/serialize.hpp"
#include "isomix/simulate.hpp"
#include "isomix/source_spline.hpp"
#include "isomix/version.hpp"

namespace fs = std::filesystem;
using namespace isomix;

namespace {

std::string default_out_dir() {
  const char* env = std::getenv("ISOMIX_OUT");
  return env && *env ? env : ".";
}

bool option_given(const CLI::App* cmd, const std::string& name) {
  const CLI::Option* opt = cmd->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

struct Options {
  std::string config;
  std::string out = default_out_dir();
  std::uint64_t seed = 1;
  int chains = 0, iterations = 0, burn_in = 0, thin = 0, threads = 0;
  bool time_varying = false;
  const CLI::App* cmd = nullptr;  // active subcommand, set by dispatch

  bool seed_set() const { return option_given(cmd, "--seed"); }
  void apply(McmcConfig& cfg) const {
    if (seed_set()) cfg.seed = seed;
    if (option_given(cmd, "--chains")) cfg.chains = chains;
    if (option_given(cmd, "--iterations")) cfg.iterations = iterations;
    if (option_given(cmd, "--burn-in")) cfg.burn_in = burn_in;
    if (option_given(cmd, "--thin")) cfg.thin = thin;
    if (option_given(cmd, "--threads")) cfg.threads = threads;
  }
};

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

/// Everything the model-facing commands load before any output is written.
struct LoadedData {
  RunConfig config;
  SourceSamples sources_raw;
  TefSamples tefs_raw;
  ConsumerDataset consumers;
  SourceSummary sources;
  TefSummary tefs;
  std::optional<ConcentrationTable> concentrations;
};

LoadedData load_all(const std::string& config_path) {
  LoadedData d;
  d.config = load_run_config(config_path);
  d.sources_raw = load_sources(d.config.sources_path);
  if (!d.config.isotope_names.empty() &&
      d.config.isotope_names != d.sources_raw.isotope_names)
    throw std::runtime_error(
        "config isotopes must list the isotope columns of the sources file in "
        "file order");
  d.consumers = load_consumers(d.config.consumers_path, d.sources_raw.isotope_names);
  d.tefs_raw = load_tefs(d.config.tefs_path, d.sources_raw.source_names,
                         d.sources_raw.isotope_names);
  d.sources = empirical_bayes_summarize(d.sources_raw);
  d.tefs = empirical_bayes_summarize(d.tefs_raw);
  if (!d.config.concentrations_path.empty())
    d.concentrations = load_concentrations(d.config.concentrations_path,
                                           d.sources_raw.source_names,
                                           d.sources_raw.isotope_names);
  return d;
}

RunManifest start_manifest(const std::string& command,
                           const std::vector<std::string>& argv,
                           const Options& opts) {
  RunManifest man;
  man.command = command;
  man.arguments = argv;
  man.config_path = opts.config.empty() ? "" : fs::absolute(opts.config).string();
  man.version = kVersion;
  man.started = utc_timestamp();
  man.output_dir = fs::absolute(opts.out).string();
  return man;
}

void finish_manifest(RunManifest& man, const std::string& out_dir,
                     const std::string& name) {
  man.finished = utc_timestamp();
  save_manifest(join(out_dir, name), man);
}

/// Per-consumer source summaries looked up from a tabulated trajectory file
/// at each consumer's time covariate (cutting feedback).
void attach_trajectories(const LoadedData& d, ModelContext& model) {
  if (d.config.trajectories_path.empty())
    throw std::runtime_error(
        "--time-varying-sources needs \"trajectories\" in the config");
  const SourceTimetable table = load_trajectories(d.config.trajectories_path);
  if (table.isotope_names != d.sources.isotope_names)
    throw std::runtime_error("trajectories file isotopes do not match the sources file");
  const Eigen::VectorXd t = d.consumers.numeric_covariate(d.config.time_covariate);

  std::vector<Eigen::Index> index;
  for (const auto& name : d.sources.source_names) {
    const auto it =
        std::find(table.source_names.begin(), table.source_names.end(), name);
    if (it == table.source_names.end())
      throw std::runtime_error("trajectories file lacks source " + name);
    index.push_back(it - table.source_names.begin());
  }
  std::vector<SourceSummary> per_consumer;
  for (Eigen::Index i = 0; i < d.consumers.n(); ++i) {
    SourceSummary s;
    s.source_names = d.sources.source_names;
    s.isotope_names = d.sources.isotope_names;
    for (const Eigen::Index k : index) s.by_source.push_back(table.at(k, t[i]));
    per_consumer.push_back(std::move(s));
  }
  model.set_time_varying_sources(std::move(per_consumer));
}

std::map<std::string, double> average_acceptance(const PosteriorDraws& draws) {
  std::map<std::string, double> acc;
  std::map<std::string, int> count;
  for (const auto& chain : draws.chains)
    for (const auto& [name, rate] : chain.acceptance) {
      acc[name] += rate;
      ++count[name];
    }
  for (auto& [name, total] : acc) total /= count[name];
  return acc;
}

int cmd_fit(const Options& opts, const std::vector<std::string>& argv) {
  RunManifest man = start_manifest("fit", argv, opts);
  LoadedData d = load_all(opts.config);
  opts.apply(d.config.mcmc);
  man.seed = d.config.mcmc.seed;
  man.data_paths = {{"consumers", d.config.consumers_path},
                    {"sources", d.config.sources_path},
                    {"tefs", d.config.tefs_path}};
  if (!d.config.concentrations_path.empty())
    man.data_paths["concentrations"] = d.config.concentrations_path;
  if (opts.time_varying) man.data_paths["trajectories"] = d.config.trajectories_path;

  ModelSpec spec = d.config.model;
  if (d.concentrations) spec.concentration = *d.concentrations;
  ModelContext model(d.consumers, spec, d.sources, d.tefs);
  if (opts.time_varying) attach_trajectories(d, model);

  const McmcConfig& cfg = d.config.mcmc;
  std::cout << "fit: " << model.n() << " consumers, " << model.k() << " sources, "
            << model.j() << " isotopes, formula " << format_formula(spec.formula)
            << '\n';
  std::cout << "mcmc: " << cfg.chains << " chains x " << cfg.iterations
            << " iterations, burn-in " << cfg.burn_in << ", thin " << cfg.thin
            << ", seed " << cfg.seed << ", threads " << cfg.threads << std::endl;

  const PosteriorDraws draws = run(model, cfg);
  const PosteriorSummary summary = summarize(draws);
  const DicReport dic_report = dic(draws, model);
  const PredictiveReport predictive = posterior_predictive(draws, model, cfg.seed);
  const auto acceptance = average_acceptance(draws);

  fs::create_directories(opts.out);
  auto emit = [&](const std::string& name, auto&& writer) {
    writer(join(opts.out, name));
    man.outputs.push_back(name);
  };
  emit("draws.csv", [&](const std::string& p) { save_draws(p, draws); });
  emit("proportions.csv",
       [&](const std::string& p) { save_proportions(p, summary); });
  emit("correlations.csv",
       [&](const std::string& p) { save_correlations(p, summary); });
  if (summary.rhat_available)
    emit("rhat.csv", [&](const std::string& p) { save_rhat(p, summary.rhat); });
  emit("predictive.csv",
       [&](const std::string& p) { save_predictive(p, predictive); });
  emit("summary.txt", [&](const std::string& p) {
    save_summary_text(p, model, summary, dic_report, predictive, acceptance);
  });
  man.outputs.push_back("manifest_fit.json");
  finish_manifest(man, opts.out, "manifest_fit.json");

  if (summary.rhat_available) {
    const double worst = summary.rhat.worst();
    if (worst > 1.1)
      std::cerr << "WARNING: worst R-hat " << worst
                << " exceeds 1.1; chains have not converged, treat estimates "
                   "with suspicion\n";
    else
      std::cout << "convergence: worst R-hat " << worst << '\n';
  }
  std::cout << "DIC(p_v) " << dic_report.dic_pv << ", predictive coverage "
            << 100.0 * predictive.coverage_95 << "%\n";
  std::cout << "wrote " << man.outputs.size() << " files to " << opts.out << '\n';
  return 0;
}

int cmd_dic(const Options& opts, const std::vector<std::string>& argv) {
  RunManifest man = start_manifest("dic", argv, opts);
  LoadedData d = load_all(opts.config);
  opts.apply(d.config.mcmc);
  man.seed = d.config.mcmc.seed;
  if (d.config.formulas.empty())
    throw std::runtime_error("dic needs a \"formulas\" array in the config");

  std::vector<DicReport> reports;
  for (const auto& formula : d.config.formulas) {
    ModelSpec spec = d.config.model;
    spec.formula = parse_formula(formula);
    if (d.concentrations) spec.concentration = *d.concentrations;
    ModelContext model(d.consumers, spec, d.sources, d.tefs);
    std::cout << "dic: sampling formula \"" << formula << "\"" << std::endl;
    const PosteriorDraws draws = run(model, d.config.mcmc);
    reports.push_back(dic(draws, model));
  }

  fs::create_directories(opts.out);
  save_dic_table(join(opts.out, "dic.csv"), d.config.formulas, reports);
  man.outputs = {"dic.csv", "manifest_dic.json"};
  finish_manifest(man, opts.out, "manifest_dic.json");

  std::printf("%-32s %12s %8s %8s %12s %12s\n", "formula", "mean_dev", "p_d", "p_v",
              "DIC(p_d)", "DIC(p_v)");
  for (std::size_t i = 0; i < reports.size(); ++i)
    std::printf("%-32s %12.2f %8.2f %8.2f %12.2f %12.2f\n",
                d.config.formulas[i].c_str(), reports[i].mean_deviance, reports[i].p_d,
                reports[i].p_v, reports[i].dic_pd, reports[i].dic_pv);
  return 0;
}

int cmd_sources(const Options& opts, const std::vector<std::string>& argv) {
  RunManifest man = start_manifest("sources", argv, opts);
  const RunConfig config = load_run_config(opts.config);
  man.data_paths = {{"sources", config.sources_path}};
  const SourceSamples samples = load_sources(config.sources_path);
  if (!samples.has_times())
    throw std::runtime_error("sources command needs a time column in " +
                             config.sources_path);
  SourceSplineOptions spline = config.spline;
  if (opts.seed_set()) spline.seed = opts.seed;
  man.seed = spline.seed;

  const std::vector<SourceSplineParams> fits = fit_source_splines(samples, spline);
  for (const auto& fit : fits)
    std::printf("source %-20s converged=%d objective=%.4f rho=%.3f\n",
                fit.source_name.c_str(), fit.converged ? 1 : 0, fit.objective,
                fit.rho);

  std::vector<double> grid = config.trajectory_grid;
  if (grid.empty()) {
    std::set<double> unique;
    for (const auto& ts : samples.times) unique.insert(ts.begin(), ts.end());
    grid.assign(unique.begin(), unique.end());
  }
  const SourceTimetable table = tabulate_sources(fits, grid);

  fs::create_directories(opts.out);
  save_trajectories(join(opts.out, "trajectories.csv"), table);
  save_spline_params(join(opts.out, "spline_params.json"), fits);
  man.outputs = {"trajectories.csv", "spline_params.json", "manifest_sources.json"};
  finish_manifest(man, opts.out, "manifest_sources.json");
  std::cout << "wrote trajectories for " << table.k() << " sources at " << grid.size()
            << " times to " << opts.out << '\n';
  return 0;
}

int cmd_simulate(const Options& opts, const std::vector<std::string>& argv) {
  RunManifest man = start_manifest("simulate", argv, opts);
  const SimulateConfig config = load_simulate_config(opts.config);
  man.seed = opts.seed;
  Rng rng(opts.seed);

  std::optional<SimulatedData> data;
  if (!config.spec.source_names.empty()) data = simulate(config.spec, rng);

  SourceSamples timed;
  SourceTimetable truth_table;
  if (!config.trajectories.empty()) {
    if (config.trajectory_times.empty())
      throw std::runtime_error("simulate: trajectories need trajectory_times");
    timed = simulate_time_varying_sources(config.trajectories,
                                          config.spec.isotope_names,
                                          config.trajectory_times,
                                          config.trajectory_replicates, rng);
    truth_table.isotope_names = config.spec.isotope_names;
    for (const auto& spec : config.trajectories) {
      truth_table.source_names.push_back(spec.name);
      truth_table.times.push_back(config.trajectory_times);
      std::vector<GaussianSummary> entries;
      for (const double t : config.trajectory_times)
        entries.push_back(time_varying_truth(spec, t));
      truth_table.entries.push_back(std::move(entries));
    }
  }

  fs::create_directories(opts.out);
  if (data) {
    save_consumers(join(opts.out, "consumers.csv"), data->consumers);
    save_sources(join(opts.out, "sources.csv"), data->sources);
    save_tefs(join(opts.out, "tefs.csv"), data->tefs);
    save_truth(join(opts.out, "truth.csv"), *data, config.spec.source_names);
    man.outputs.insert(man.outputs.end(),
                       {"consumers.csv", "sources.csv", "tefs.csv", "truth.csv"});
  }
  if (!config.trajectories.empty()) {
    save_sources(join(opts.out, "timed_sources.csv"), timed);
    save_trajectories(join(opts.out, "trajectory_truth.csv"), truth_table);
    man.outputs.insert(man.outputs.end(),
                       {"timed_sources.csv", "trajectory_truth.csv"});
  }
  man.outputs.push_back("manifest_simulate.json");
  finish_manifest(man, opts.out, "manifest_simulate.json");
  std::cout << "wrote " << man.outputs.size() << " files to " << opts.out << '\n';
  return 0;
}

int cmd_check(const Options& opts, const std::vector<std::string>& argv) {
  RunManifest man = start_manifest("check", argv, opts);
  LoadedData d = load_all(opts.config);
  man.data_paths = {{"consumers", d.config.consumers_path},
                    {"sources", d.config.sources_path},
                    {"tefs", d.config.tefs_path}};

  std::cout << "check: " << d.consumers.n() << " consumers, " << d.sources.k()
            << " sources, " << d.consumers.j() << " isotopes\n";
  for (Eigen::Index k = 0; k < d.sources.k(); ++k) {
    const auto& s = d.sources.by_source[static_cast<std::size_t>(k)];
    std::cout << "source " << d.sources.source_names[static_cast<std::size_t>(k)]
              << ": mean (";
    for (Eigen::Index j = 0; j < s.mu.size(); ++j)
      std::cout << (j ? ", " : "") << s.mu[j];
    std::cout << ")" << (s.degenerate ? " [degenerate covariance]" : "") << '\n';
  }

  const IsospaceReport report = isospace_check(d.consumers, d.sources, d.tefs);
  std::vector<std::vector<std::string>> rows;
  if (report.computed) {
    int outside = 0;
    for (std::size_t i = 0; i < report.consumers.size(); ++i) {
      const auto& entry = report.consumers[i];
      if (!entry.inside) {
        ++outside;
        std::cout << "WARNING: consumer " << i + 1
                  << " lies outside the TEF-corrected source hull (distance "
                  << entry.distance << ")\n";
      }
      rows.push_back({"consumer", std::to_string(i + 1), "0",
                      format_double(d.consumers.isotopes(static_cast<Eigen::Index>(i), 0)),
                      format_double(d.consumers.isotopes(static_cast<Eigen::Index>(i), 1)),
                      entry.inside ? "1" : "0", format_double(entry.distance)});
    }
    for (std::size_t v = 0; v < report.hull.size(); ++v)
      rows.push_back({"hull", "", std::to_string(v), format_double(report.hull[v][0]),
                      format_double(report.hull[v][1]), "", ""});
    std::cout << (outside == 0 ? "all consumers inside the source hull\n"
                               : "iso-space check found consumers outside the hull\n");
  } else {
    std::cout << "iso-space hull check skipped (needs exactly 2 isotopes)\n";
  }

  fs::create_directories(opts.out);
  write_csv(join(opts.out, "isospace_check.csv"),
            {"kind", "label", "order", "x", "y", "inside", "distance"}, rows);
  man.outputs = {"isospace_check.csv", "manifest_check.json"};
  finish_manifest(man, opts.out, "manifest_check.json");
  return 0;
}

int cmd_plot(const Options& opts, const std::vector<std::string>& argv) {
  RunManifest man = start_manifest("plot", argv, opts);
  LoadedData d = load_all(opts.config);
  man.data_paths = {{"consumers", d.config.consumers_path},
                    {"sources", d.config.sources_path},
                    {"tefs", d.config.tefs_path},
                    {"draws", join(opts.out, "draws.csv")}};
  const StoredDraws stored = load_draws(join(opts.out, "draws.csv"));
  for (Eigen::Index i = 0; i < d.consumers.n(); ++i)
    stored.column("p." + std::to_string(i + 1) + "." + d.sources.source_names.front());

  auto note = [&](const PlotFile& f) {
    man.outputs.push_back(fs::path(f.svg_path).filename().string());
    man.outputs.push_back(fs::path(f.data_path).filename().string());
    std::cout << "wrote " << f.svg_path << '\n';
  };

  if (d.consumers.j() == 2)
    note(plot_isospace(join(opts.out, "isospace"), d.consumers, d.sources, d.tefs));
  else
    std::cout << "iso-space plot skipped (needs exactly 2 isotopes)\n";

  note(plot_proportion_densities(join(opts.out, "proportions"), stored,
                                 d.sources.source_names, d.consumers.n()));

  const auto time_col = d.consumers.covariates.find(d.config.time_covariate);
  if (time_col != d.consumers.covariates.end() && time_col->second.is_numeric &&
      d.consumers.n() >= 2)
    note(plot_proportion_ribbon(join(opts.out, "ribbon"), stored,
                                d.sources.source_names, d.consumers.n(),
                                time_col->second.numeric));
  else
    std::cout << "ribbon plot skipped (no numeric time covariate \""
              << d.config.time_covariate << "\")\n";

  const std::string density_path = join(opts.out, "predictive.csv");
  bool plotted_predictive = false;
  if (fs::exists(density_path) && d.consumers.j() == 2) {
    const CsvTable table = read_csv(density_path);
    if (!table.rows.empty()) {
      std::set<double> xs, ys;
      for (const auto& row : table.rows) {
        xs.insert(parse_double(row[0], density_path));
        ys.insert(parse_double(row[1], density_path));
      }
      Eigen::VectorXd grid_x(static_cast<Eigen::Index>(xs.size()));
      Eigen::VectorXd grid_y(static_cast<Eigen::Index>(ys.size()));
      Eigen::Index idx = 0;
      for (const double v : xs) grid_x[idx++] = v;
      idx = 0;
      for (const double v : ys) grid_y[idx++] = v;
      if (grid_x.size() * grid_y.size() == static_cast<Eigen::Index>(table.rows.size())) {
        std::map<double, Eigen::Index> xi, yi;
        for (Eigen::Index g = 0; g < grid_x.size(); ++g) xi[grid_x[g]] = g;
        for (Eigen::Index g = 0; g < grid_y.size(); ++g) yi[grid_y[g]] = g;
        Eigen::MatrixXd density(grid_y.size(), grid_x.size());
        for (const auto& row : table.rows)
          density(yi[parse_double(row[1], density_path)],
                  xi[parse_double(row[0], density_path)]) =
              parse_double(row[2], density_path);
        note(plot_predictive(join(opts.out, "predictive"), d.consumers, grid_x,
                             grid_y, density));
        plotted_predictive = true;
      }
    }
  }
  if (!plotted_predictive)
    std::cout << "predictive plot skipped (no density grid in " << density_path
              << ")\n";

  man.outputs.push_back("manifest_plot.json");
  finish_manifest(man, opts.out, "manifest_plot.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian stable-isotope mixing models"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::vector<std::string> raw_args(argv, argv + argc);
  Options opts;
  int rc = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config, "configuration file (JSON)")
        ->required();
    cmd->add_option("--out", opts.out,
                    "output directory (default: $ISOMIX_OUT or .)");
    cmd->add_option("--seed", opts.seed, "master RNG seed");
  };
  auto add_mcmc = [&](CLI::App* cmd) {
    cmd->add_option("--chains", opts.chains, "number of chains");
    cmd->add_option("--iterations", opts.iterations, "sweeps per chain");
    cmd->add_option("--burn-in", opts.burn_in, "sweeps discarded per chain");
    cmd->add_option("--thin", opts.thin, "keep every thin-th sweep");
    cmd->add_option("--threads", opts.threads, "worker threads for chains");
  };
  auto dispatch = [&](CLI::App* cmd, int (*fn)(const Options&,
                                               const std::vector<std::string>&)) {
    cmd->callback([&, cmd, fn]() {
      opts.cmd = cmd;
      try {
        rc = fn(opts, raw_args);
      } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        rc = 1;
      }
    });
  };

  CLI::App* fit = app.add_subcommand("fit", "fit the mixing model by MCMC");
  add_common(fit);
  add_mcmc(fit);
  fit->add_flag("--time-varying-sources", opts.time_varying,
                "use tabulated source trajectories at each consumer's time");
  dispatch(fit, cmd_fit);

  CLI::App* simulate_cmd =
      app.add_subcommand("simulate", "generate synthetic data from known truth");
  add_common(simulate_cmd);
  dispatch(simulate_cmd, cmd_simulate);

  CLI::App* sources_cmd =
      app.add_subcommand("sources", "fit source spline trajectories (MAP)");
  add_common(sources_cmd);
  dispatch(sources_cmd, cmd_sources);

  CLI::App* dic_cmd =
      app.add_subcommand("dic", "compare mean-model formulas by DIC");
  add_common(dic_cmd);
  add_mcmc(dic_cmd);
  dispatch(dic_cmd, cmd_dic);

  CLI::App* plot_cmd = app.add_subcommand(
      "plot", "render SVG plots and plot-data tables from a fit directory");
  add_common(plot_cmd);
  dispatch(plot_cmd, cmd_plot);

  CLI::App* check_cmd =
      app.add_subcommand("check", "validate data files and report iso-space hull");
  add_common(check_cmd);
  dispatch(check_cmd, cmd_check);

  CLI11_PARSE(app, argc, argv);
  return rc;
}
