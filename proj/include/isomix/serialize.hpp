#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/diagnostics.hpp"
#include "isomix/model.hpp"
#include "isomix/sampler.hpp"
#include "isomix/simulate.hpp"
#include "isomix/source_spline.hpp"

namespace isomix {

/// Long-format draws file: header `chain,iteration,<scalar labels...>`, one
/// row per retained draw. Doubles use shortest round-trip formatting, so the
/// stored draws reconstruct bit for bit.
void save_draws(const std::string& path, const PosteriorDraws& draws);

struct StoredDraws {
  std::vector<std::string> labels;  // scalar labels after chain, iteration
  std::vector<int> chain;
  std::vector<long long> iteration;
  Eigen::MatrixXd values;  // one row per stored draw

  Eigen::Index find(const std::string& label) const;  // -1 when absent
  Eigen::VectorXd column(const std::string& label) const;
};
StoredDraws load_draws(const std::string& path);

/// Configuration for `fit`, `dic`, `sources`, and `check` (JSON). Relative
/// data paths are resolved against the directory holding the config file.
struct RunConfig {
  std::string consumers_path, sources_path, tefs_path;
  std::string concentrations_path;  // empty: no concentration dependence
  std::string trajectories_path;    // empty: static sources
  std::string time_covariate = "t";
  std::vector<std::string> isotope_names;  // empty: consumer file order
  ModelSpec model;
  std::vector<std::string> formulas;  // `dic` only: candidate mean models
  McmcConfig mcmc;
  SourceSplineOptions spline;          // `sources` only
  std::vector<double> trajectory_grid;  // times tabulated by `sources`
};
RunConfig load_run_config(const std::string& path);

/// Configuration for `simulate` (JSON).
struct SimulateConfig {
  SimulationSpec spec;
  std::vector<TimeVaryingSourceSpec> trajectories;
  std::vector<double> trajectory_times;
  int trajectory_replicates = 5;
};
SimulateConfig load_simulate_config(const std::string& path);

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::string config_path;
  std::map<std::string, std::string> data_paths;
  std::uint64_t seed = 0;
  std::string version;
  std::string started, finished;  // UTC, ISO 8601
  std::string output_dir;
  std::vector<std::string> outputs;  // file names inside output_dir
};
void save_manifest(const std::string& path, const RunManifest& manifest);

std::string utc_timestamp();

void save_proportions(const std::string& path, const PosteriorSummary& summary);
void save_correlations(const std::string& path, const PosteriorSummary& summary);
void save_rhat(const std::string& path, const GelmanRubinResult& rhat);
void save_predictive(const std::string& path, const PredictiveReport& report);
void save_truth(const std::string& path, const SimulatedData& data,
                const std::vector<std::string>& source_names);
void save_dic_table(const std::string& path,
                    const std::vector<std::string>& formulas,
                    const std::vector<DicReport>& reports);
void save_spline_params(const std::string& path,
                        const std::vector<SourceSplineParams>& fits);

void save_summary_text(const std::string& path, const ModelContext& model,
                       const PosteriorSummary& summary, const DicReport& dic,
                       const PredictiveReport& predictive,
                       const std::map<std::string, double>& acceptance);

}  // namespace isomix
