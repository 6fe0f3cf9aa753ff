#include "isomix/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>

#include <json.hpp>

#include "isomix/csv.hpp"

namespace isomix {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    json j;
    in >> j;
    if (!j.is_object()) throw std::runtime_error(path + ": expected a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void check_keys(const json& j, const std::string& context,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw std::runtime_error(context + ": unknown key \"" + it.key() + "\"");
  }
}

double as_double(const json& j, const std::string& context) {
  if (!j.is_number()) throw std::runtime_error(context + ": expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& context) {
  if (!j.is_number_integer()) throw std::runtime_error(context + ": expected an integer");
  return j.get<int>();
}

std::uint64_t as_u64(const json& j, const std::string& context) {
  if (!j.is_number_unsigned() && !j.is_number_integer())
    throw std::runtime_error(context + ": expected a nonnegative integer");
  const auto v = j.get<long long>();
  if (v < 0) throw std::runtime_error(context + ": expected a nonnegative integer");
  return static_cast<std::uint64_t>(v);
}

bool as_bool(const json& j, const std::string& context) {
  if (!j.is_boolean()) throw std::runtime_error(context + ": expected true/false");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& context) {
  if (!j.is_string()) throw std::runtime_error(context + ": expected a string");
  return j.get<std::string>();
}

Eigen::VectorXd as_vector(const json& j, const std::string& context) {
  if (!j.is_array()) throw std::runtime_error(context + ": expected an array");
  Eigen::VectorXd out(static_cast<Eigen::Index>(j.size()));
  Eigen::Index i = 0;
  for (const auto& v : j) out[i++] = as_double(v, context);
  return out;
}

Eigen::MatrixXd as_matrix(const json& j, const std::string& context) {
  if (!j.is_array() || j.empty())
    throw std::runtime_error(context + ": expected an array of rows");
  Eigen::MatrixXd out;
  Eigen::Index r = 0;
  for (const auto& row : j) {
    const Eigen::VectorXd v = as_vector(row, context);
    if (r == 0) out.resize(static_cast<Eigen::Index>(j.size()), v.size());
    if (v.size() != out.cols())
      throw std::runtime_error(context + ": ragged matrix rows");
    out.row(r++) = v.transpose();
  }
  return out;
}

std::vector<std::string> as_strings(const json& j, const std::string& context) {
  if (!j.is_array()) throw std::runtime_error(context + ": expected an array");
  std::vector<std::string> out;
  for (const auto& v : j) out.push_back(as_string(v, context));
  return out;
}

std::vector<double> as_doubles(const json& j, const std::string& context) {
  if (!j.is_array()) throw std::runtime_error(context + ": expected an array");
  std::vector<double> out;
  for (const auto& v : j) out.push_back(as_double(v, context));
  return out;
}

/// Relative data paths are taken relative to the config file's directory.
std::string resolve_path(const std::string& config_path, const std::string& value) {
  if (value.empty()) return value;
  std::filesystem::path p(value);
  if (p.is_absolute()) return value;
  return (std::filesystem::path(config_path).parent_path() / p).string();
}

McmcConfig parse_mcmc(const json& j, const std::string& context) {
  check_keys(j, context,
             {"chains", "iterations", "burn_in", "thin", "seed", "adapt_window",
              "threads"});
  McmcConfig out;
  if (j.contains("chains")) out.chains = as_int(j["chains"], context + ".chains");
  if (j.contains("iterations"))
    out.iterations = as_int(j["iterations"], context + ".iterations");
  if (j.contains("burn_in")) out.burn_in = as_int(j["burn_in"], context + ".burn_in");
  if (j.contains("thin")) out.thin = as_int(j["thin"], context + ".thin");
  if (j.contains("seed")) out.seed = as_u64(j["seed"], context + ".seed");
  if (j.contains("adapt_window"))
    out.adapt_window = as_int(j["adapt_window"], context + ".adapt_window");
  if (j.contains("threads")) out.threads = as_int(j["threads"], context + ".threads");
  return out;
}

PriorSpec parse_priors(const json& j, const std::string& context) {
  check_keys(j, context,
             {"beta_sd", "sigma_dof", "sigma_scale", "kappa_shape", "kappa_rate",
              "tau_shape", "tau_rate"});
  PriorSpec out;
  if (j.contains("beta_sd")) out.beta_sd = as_double(j["beta_sd"], context + ".beta_sd");
  if (j.contains("sigma_dof"))
    out.sigma_dof = as_double(j["sigma_dof"], context + ".sigma_dof");
  if (j.contains("sigma_scale"))
    out.sigma_scale = as_matrix(j["sigma_scale"], context + ".sigma_scale");
  if (j.contains("kappa_shape"))
    out.kappa_shape = as_double(j["kappa_shape"], context + ".kappa_shape");
  if (j.contains("kappa_rate"))
    out.kappa_rate = as_double(j["kappa_rate"], context + ".kappa_rate");
  if (j.contains("tau_shape"))
    out.tau_shape = as_double(j["tau_shape"], context + ".tau_shape");
  if (j.contains("tau_rate"))
    out.tau_rate = as_double(j["tau_rate"], context + ".tau_rate");
  return out;
}

SourceSplineOptions parse_spline(const json& j, const std::string& context) {
  check_keys(j, context,
             {"knot_count", "degree", "anchor_sd", "tau_shape", "tau_rate",
              "kappa_sigma", "fixed_tau", "restarts", "seed", "max_iterations"});
  SourceSplineOptions out;
  if (j.contains("knot_count"))
    out.knot_count = as_int(j["knot_count"], context + ".knot_count");
  if (j.contains("degree")) out.degree = as_int(j["degree"], context + ".degree");
  if (j.contains("anchor_sd"))
    out.anchor_sd = as_double(j["anchor_sd"], context + ".anchor_sd");
  if (j.contains("tau_shape"))
    out.tau_shape = as_double(j["tau_shape"], context + ".tau_shape");
  if (j.contains("tau_rate"))
    out.tau_rate = as_double(j["tau_rate"], context + ".tau_rate");
  if (j.contains("kappa_sigma"))
    out.kappa_sigma = as_double(j["kappa_sigma"], context + ".kappa_sigma");
  if (j.contains("fixed_tau"))
    out.fixed_tau = as_double(j["fixed_tau"], context + ".fixed_tau");
  if (j.contains("restarts")) out.restarts = as_int(j["restarts"], context + ".restarts");
  if (j.contains("seed")) out.seed = as_u64(j["seed"], context + ".seed");
  if (j.contains("max_iterations"))
    out.optim.max_iterations = as_int(j["max_iterations"], context + ".max_iterations");
  return out;
}

TimeVaryingSourceSpec parse_trajectory(const json& j, const std::string& context) {
  check_keys(j, context,
             {"name", "mean_base", "mean_amp", "mean_phase", "logvar_base",
              "logvar_slope", "rho", "period"});
  TimeVaryingSourceSpec out;
  if (!j.contains("name")) throw std::runtime_error(context + ": missing name");
  out.name = as_string(j["name"], context + ".name");
  for (const char* key : {"mean_base", "mean_amp", "mean_phase", "logvar_base",
                          "logvar_slope"})
    if (!j.contains(key))
      throw std::runtime_error(context + ": missing " + std::string(key));
  out.mean_base = as_vector(j["mean_base"], context + ".mean_base");
  out.mean_amp = as_vector(j["mean_amp"], context + ".mean_amp");
  out.mean_phase = as_vector(j["mean_phase"], context + ".mean_phase");
  out.logvar_base = as_vector(j["logvar_base"], context + ".logvar_base");
  out.logvar_slope = as_vector(j["logvar_slope"], context + ".logvar_slope");
  if (j.contains("rho")) out.rho = as_double(j["rho"], context + ".rho");
  if (j.contains("period")) out.period = as_double(j["period"], context + ".period");
  return out;
}

}  // namespace

void save_draws(const std::string& path, const PosteriorDraws& draws) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "chain,iteration";
  for (const auto& label : draws.scalar_labels) out << ',' << label;
  out << '\n';
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const Eigen::MatrixXd scalars = scalar_matrix(draws, static_cast<int>(c));
    const auto& chain = draws.chains[c];
    for (int r = 0; r < chain.size(); ++r) {
      out << (c + 1) << ',' << chain.iteration[static_cast<std::size_t>(r)];
      for (Eigen::Index col = 0; col < scalars.cols(); ++col)
        out << ',' << format_double(scalars(r, col));
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

Eigen::Index StoredDraws::find(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<Eigen::Index>(i);
  return -1;
}

Eigen::VectorXd StoredDraws::column(const std::string& label) const {
  const Eigen::Index idx = find(label);
  if (idx < 0) throw std::runtime_error("draws file has no column " + label);
  return values.col(idx);
}

StoredDraws load_draws(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.header.size() < 3 || table.header[0] != "chain" ||
      table.header[1] != "iteration")
    throw std::runtime_error(path + ": expected chain,iteration,<scalars...> header");
  StoredDraws out;
  out.labels.assign(table.header.begin() + 2, table.header.end());
  const Eigen::Index cols = static_cast<Eigen::Index>(out.labels.size());
  out.values.resize(static_cast<Eigen::Index>(table.rows.size()), cols);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string where = path + ":" + std::to_string(CsvTable::line_of(r));
    out.chain.push_back(static_cast<int>(parse_double(table.rows[r][0], where)));
    out.iteration.push_back(
        static_cast<long long>(parse_double(table.rows[r][1], where)));
    for (Eigen::Index c = 0; c < cols; ++c)
      out.values(static_cast<Eigen::Index>(r), c) =
          parse_double(table.rows[r][static_cast<std::size_t>(c) + 2], where);
  }
  return out;
}

RunConfig load_run_config(const std::string& path) {
  const json j = load_json(path);
  check_keys(j, path,
             {"consumers", "sources", "tefs", "concentrations", "trajectories",
              "time_covariate", "isotopes", "formula", "formulas", "helmert",
              "mcmc", "priors", "spline", "trajectory_times"});
  RunConfig out;
  if (!j.contains("consumers") || !j.contains("sources") || !j.contains("tefs"))
    throw std::runtime_error(path + ": consumers, sources, and tefs are required");
  out.consumers_path = resolve_path(path, as_string(j["consumers"], "consumers"));
  out.sources_path = resolve_path(path, as_string(j["sources"], "sources"));
  out.tefs_path = resolve_path(path, as_string(j["tefs"], "tefs"));
  if (j.contains("concentrations"))
    out.concentrations_path =
        resolve_path(path, as_string(j["concentrations"], "concentrations"));
  if (j.contains("trajectories"))
    out.trajectories_path =
        resolve_path(path, as_string(j["trajectories"], "trajectories"));
  if (j.contains("time_covariate"))
    out.time_covariate = as_string(j["time_covariate"], "time_covariate");
  if (j.contains("isotopes")) out.isotope_names = as_strings(j["isotopes"], "isotopes");
  if (j.contains("formula"))
    out.model.formula = parse_formula(as_string(j["formula"], "formula"));
  if (j.contains("formulas"))
    out.formulas = as_strings(j["formulas"], "formulas");
  if (j.contains("helmert"))
    out.model.use_helmert_contrasts = as_bool(j["helmert"], "helmert");
  if (j.contains("mcmc")) out.mcmc = parse_mcmc(j["mcmc"], "mcmc");
  if (j.contains("priors")) out.model.priors = parse_priors(j["priors"], "priors");
  if (j.contains("spline")) out.spline = parse_spline(j["spline"], "spline");
  if (j.contains("trajectory_times"))
    out.trajectory_grid = as_doubles(j["trajectory_times"], "trajectory_times");
  return out;
}

SimulateConfig load_simulate_config(const std::string& path) {
  const json j = load_json(path);
  check_keys(j, path,
             {"n", "isotopes", "sources", "tef_mu", "tef_cov", "sigma", "true_p",
              "harmonic_beta", "period", "times", "kappa", "source_samples",
              "tef_samples", "exact_source_moments", "trajectories",
              "trajectory_times", "trajectory_replicates"});
  SimulateConfig out;
  SimulationSpec& spec = out.spec;
  if (j.contains("n")) spec.n = as_int(j["n"], "n");
  if (j.contains("isotopes")) spec.isotope_names = as_strings(j["isotopes"], "isotopes");
  if (!j.contains("sources") && !j.contains("trajectories"))
    throw std::runtime_error(path + ": need a sources array, trajectories, or both");
  if (j.contains("sources") && (!j["sources"].is_array() || j["sources"].empty()))
    throw std::runtime_error(path + ": sources must be a non-empty array");

  Eigen::VectorXd default_tef_mu;
  Eigen::MatrixXd default_tef_cov;
  if (j.contains("tef_mu")) default_tef_mu = as_vector(j["tef_mu"], "tef_mu");
  if (j.contains("tef_cov")) default_tef_cov = as_matrix(j["tef_cov"], "tef_cov");
  const Eigen::Index jj = static_cast<Eigen::Index>(spec.isotope_names.size());

  const json empty_sources = json::array();
  const json& sources_json = j.contains("sources") ? j["sources"] : empty_sources;
  for (const auto& src : sources_json) {
    const std::string context = "sources[" + std::to_string(spec.source_names.size()) + "]";
    check_keys(src, context, {"name", "mu", "cov", "tef_mu", "tef_cov"});
    if (!src.contains("name") || !src.contains("mu") || !src.contains("cov"))
      throw std::runtime_error(context + ": name, mu, and cov are required");
    spec.source_names.push_back(as_string(src["name"], context + ".name"));
    spec.source_mu.push_back(as_vector(src["mu"], context + ".mu"));
    spec.source_cov.push_back(as_matrix(src["cov"], context + ".cov"));
    if (src.contains("tef_mu"))
      spec.tef_mu.push_back(as_vector(src["tef_mu"], context + ".tef_mu"));
    else if (default_tef_mu.size() > 0)
      spec.tef_mu.push_back(default_tef_mu);
    else
      spec.tef_mu.push_back(Eigen::VectorXd::Zero(jj));
    if (src.contains("tef_cov"))
      spec.tef_cov.push_back(as_matrix(src["tef_cov"], context + ".tef_cov"));
    else if (default_tef_cov.size() > 0)
      spec.tef_cov.push_back(default_tef_cov);
    else
      spec.tef_cov.push_back(Eigen::MatrixXd::Zero(jj, jj));
  }

  if (j.contains("sigma"))
    spec.sigma = as_matrix(j["sigma"], "sigma");
  else
    spec.sigma = Eigen::MatrixXd::Zero(jj, jj);
  if (j.contains("true_p")) spec.true_p = as_vector(j["true_p"], "true_p");
  if (j.contains("harmonic_beta")) {
    spec.harmonic = true;
    spec.harmonic_beta = as_matrix(j["harmonic_beta"], "harmonic_beta");
  }
  if (j.contains("period")) spec.period = as_double(j["period"], "period");
  if (j.contains("times")) spec.times = as_vector(j["times"], "times");
  if (j.contains("kappa")) spec.kappa = as_double(j["kappa"], "kappa");
  if (j.contains("source_samples"))
    spec.source_sample_count = as_int(j["source_samples"], "source_samples");
  if (j.contains("tef_samples"))
    spec.tef_sample_count = as_int(j["tef_samples"], "tef_samples");
  if (j.contains("exact_source_moments"))
    spec.exact_source_moments =
        as_bool(j["exact_source_moments"], "exact_source_moments");

  if (j.contains("trajectories")) {
    if (!j["trajectories"].is_array())
      throw std::runtime_error(path + ": trajectories must be an array");
    std::size_t idx = 0;
    for (const auto& t : j["trajectories"])
      out.trajectories.push_back(
          parse_trajectory(t, "trajectories[" + std::to_string(idx++) + "]"));
  }
  if (j.contains("trajectory_times"))
    out.trajectory_times = as_doubles(j["trajectory_times"], "trajectory_times");
  if (j.contains("trajectory_replicates"))
    out.trajectory_replicates = as_int(j["trajectory_replicates"], "trajectory_replicates");
  return out;
}

void save_manifest(const std::string& path, const RunManifest& manifest) {
  ordered_json j;
  j["command"] = manifest.command;
  j["arguments"] = manifest.arguments;
  j["config"] = manifest.config_path;
  ordered_json data = ordered_json::object();
  for (const auto& [name, p] : manifest.data_paths) data[name] = p;
  j["data"] = data;
  j["seed"] = manifest.seed;
  j["version"] = manifest.version;
  j["started"] = manifest.started;
  j["finished"] = manifest.finished;
  j["output_dir"] = manifest.output_dir;
  j["outputs"] = manifest.outputs;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void save_proportions(const std::string& path, const PosteriorSummary& summary) {
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < summary.n; ++i)
    for (Eigen::Index k = 0; k < summary.kdim; ++k)
      rows.push_back({std::to_string(i + 1),
                      summary.source_names[static_cast<std::size_t>(k)],
                      format_double(summary.mean(i, k)), format_double(summary.sd(i, k)),
                      format_double(summary.q025(i, k)), format_double(summary.q25(i, k)),
                      format_double(summary.q50(i, k)), format_double(summary.q75(i, k)),
                      format_double(summary.q975(i, k))});
  write_csv(path,
            {"consumer", "source", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5"},
            rows);
}

void save_correlations(const std::string& path, const PosteriorSummary& summary) {
  std::vector<std::string> header{"source"};
  header.insert(header.end(), summary.source_names.begin(), summary.source_names.end());
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index a = 0; a < summary.kdim; ++a) {
    std::vector<std::string> row{summary.source_names[static_cast<std::size_t>(a)]};
    for (Eigen::Index b = 0; b < summary.kdim; ++b)
      row.push_back(format_double(summary.correlation(a, b)));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void save_rhat(const std::string& path, const GelmanRubinResult& rhat) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < rhat.labels.size(); ++i)
    rows.push_back({rhat.labels[i],
                    format_double(rhat.rhat[static_cast<Eigen::Index>(i)]),
                    rhat.degenerate[i] ? "1" : "0"});
  write_csv(path, {"parameter", "rhat", "degenerate"}, rows);
}

void save_predictive(const std::string& path, const PredictiveReport& report) {
  std::vector<std::vector<std::string>> rows;
  if (report.density_computed) {
    for (Eigen::Index iy = 0; iy < report.grid_y.size(); ++iy)
      for (Eigen::Index ix = 0; ix < report.grid_x.size(); ++ix)
        rows.push_back({format_double(report.grid_x[ix]),
                        format_double(report.grid_y[iy]),
                        format_double(report.density(iy, ix))});
  }
  write_csv(path, {"x", "y", "density"}, rows);
}

void save_truth(const std::string& path, const SimulatedData& data,
                const std::vector<std::string>& source_names) {
  std::vector<std::string> header{"consumer"};
  for (const auto& name : source_names) header.push_back("p." + name);
  for (Eigen::Index kc = 0; kc < data.true_phi.cols(); ++kc)
    header.push_back("phi." + std::to_string(kc + 1));
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < data.true_props.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i + 1)};
    for (Eigen::Index k = 0; k < data.true_props.cols(); ++k)
      row.push_back(format_double(data.true_props(i, k)));
    for (Eigen::Index kc = 0; kc < data.true_phi.cols(); ++kc)
      row.push_back(format_double(data.true_phi(i, kc)));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void save_dic_table(const std::string& path, const std::vector<std::string>& formulas,
                    const std::vector<DicReport>& reports) {
  if (formulas.size() != reports.size())
    throw std::invalid_argument("dic table: formula/report count mismatch");
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < formulas.size(); ++i)
    rows.push_back({formulas[i], format_double(reports[i].mean_deviance),
                    format_double(reports[i].p_d), format_double(reports[i].p_v),
                    format_double(reports[i].dic_pd), format_double(reports[i].dic_pv)});
  write_csv(path, {"formula", "mean_deviance", "p_d", "p_v", "dic_pd", "dic_pv"}, rows);
}

void save_spline_params(const std::string& path,
                        const std::vector<SourceSplineParams>& fits) {
  ordered_json out = ordered_json::array();
  for (const auto& fit : fits) {
    ordered_json j;
    j["source"] = fit.source_name;
    j["isotopes"] = fit.isotope_names;
    j["time_min"] = fit.basis.a();
    j["time_max"] = fit.basis.b();
    j["degree"] = fit.basis.degree();
    j["basis_size"] = fit.basis.size();
    auto matrix_rows = [](const Eigen::MatrixXd& m) {
      ordered_json rows = ordered_json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
      }
      return rows;
    };
    j["beta_prime"] = matrix_rows(fit.beta_prime);
    j["beta_sigma"] = matrix_rows(fit.beta_sigma);
    j["rho"] = fit.rho;
    ordered_json tau = ordered_json::array();
    for (Eigen::Index i = 0; i < fit.tau_prime.size(); ++i) tau.push_back(fit.tau_prime[i]);
    j["tau_prime"] = tau;
    j["kappa_sigma"] = fit.kappa_sigma;
    j["objective"] = fit.objective;
    j["converged"] = fit.converged;
    out.push_back(j);
  }
  std::ofstream stream(path);
  if (!stream) throw std::runtime_error("cannot write " + path);
  stream << out.dump(2) << '\n';
  if (!stream) throw std::runtime_error("write failed for " + path);
}

void save_summary_text(const std::string& path, const ModelContext& model,
                       const PosteriorSummary& summary, const DicReport& dic,
                       const PredictiveReport& predictive,
                       const std::map<std::string, double>& acceptance) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  char buf[256];

  out << "isomix fit summary\n";
  out << "==================\n\n";
  out << "formula: " << format_formula(model.spec().formula) << '\n';
  std::snprintf(buf, sizeof(buf),
                "consumers: %lld   sources: %lld   isotopes: %lld   design columns: %lld\n",
                static_cast<long long>(model.n()), static_cast<long long>(model.k()),
                static_cast<long long>(model.j()), static_cast<long long>(model.l()));
  out << buf;
  for (const auto& [name, rate] : acceptance) {
    std::snprintf(buf, sizeof(buf), "acceptance %s: %.3f\n", name.c_str(), rate);
    out << buf;
  }

  out << "\ndietary proportions, mean (2.5%, 50%, 97.5%)\n";
  for (Eigen::Index i = 0; i < summary.n; ++i) {
    std::snprintf(buf, sizeof(buf), "consumer %lld\n", static_cast<long long>(i + 1));
    out << buf;
    for (Eigen::Index k = 0; k < summary.kdim; ++k) {
      std::snprintf(buf, sizeof(buf), "  %-20s %.3f (%.3f, %.3f, %.3f)\n",
                    summary.source_names[static_cast<std::size_t>(k)].c_str(),
                    summary.mean(i, k), summary.q025(i, k), summary.q50(i, k),
                    summary.q975(i, k));
      out << buf;
    }
  }

  out << "\npopulation-mean proportion correlations\n";
  for (Eigen::Index a = 0; a < summary.kdim; ++a) {
    std::snprintf(buf, sizeof(buf), "  %-20s",
                  summary.source_names[static_cast<std::size_t>(a)].c_str());
    out << buf;
    for (Eigen::Index b = 0; b < summary.kdim; ++b) {
      std::snprintf(buf, sizeof(buf), " %7.3f", summary.correlation(a, b));
      out << buf;
    }
    out << '\n';
  }

  if (summary.rhat_available) {
    const double worst = summary.rhat.worst();
    std::snprintf(buf, sizeof(buf), "\nconvergence: worst R-hat %.4f (%s)\n", worst,
                  worst < 1.1 ? "below 1.1" : "WARNING: above 1.1, inspect chains");
    out << buf;
  }

  std::snprintf(buf, sizeof(buf),
                "\nDIC: mean deviance %.2f   p_d %.2f   p_v %.2f   DIC(p_d) %.2f   "
                "DIC(p_v) %.2f\n",
                dic.mean_deviance, dic.p_d, dic.p_v, dic.dic_pd, dic.dic_pv);
  out << buf;

  std::snprintf(buf, sizeof(buf),
                "posterior predictive: %.1f%% of observations inside the 95%% region\n",
                100.0 * predictive.coverage_95);
  out << buf;
  if (!predictive.notice.empty()) out << "note: " << predictive.notice << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace isomix
