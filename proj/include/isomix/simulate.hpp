#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/data.hpp"
#include "isomix/rng.hpp"

namespace isomix {

/// Forward-model specification for synthetic datasets: known sources, TEFs,
/// residual covariance, and either a constant diet or a harmonic diet curve
/// on the ilr coordinates.
struct SimulationSpec {
  Eigen::Index n = 9;
  std::vector<std::string> isotope_names{"d13C", "d15N"};
  std::vector<std::string> source_names;
  std::vector<Eigen::VectorXd> source_mu;   // K entries of J
  std::vector<Eigen::MatrixXd> source_cov;  // K entries of J x J
  std::vector<Eigen::VectorXd> tef_mu;
  std::vector<Eigen::MatrixXd> tef_cov;
  Eigen::MatrixXd sigma;  // residual covariance, J x J

  Eigen::VectorXd true_p;         // constant diet (length K); used unless harmonic
  bool harmonic = false;
  Eigen::MatrixXd harmonic_beta;  // (K-1) x 3 coefficients on [1, cos, sin]
  double period = 365.0;
  Eigen::VectorXd times;  // length n; written as covariate column "t" when set
  double kappa = 0.0;     // variance of phi around the diet curve (0: exact)

  int source_sample_count = 30;
  int tef_sample_count = 0;  // 0: write the direct mean/sd TEF form
  /// When set, source samples are affine-adjusted so their sample moments
  /// reproduce source_mu/source_cov exactly (the empirical-Bayes summaries
  /// then match the generating values with no sampling noise).
  bool exact_source_moments = true;
};

struct SimulatedData {
  ConsumerDataset consumers;
  SourceSamples sources;
  TefSamples tefs;
  Eigen::MatrixXd true_phi;    // N x (K-1)
  Eigen::MatrixXd true_props;  // N x K
};

SimulatedData simulate(const SimulationSpec& spec, Rng& rng);

/// `count` draws adjusted so the sample mean is exactly mu and the sample
/// covariance (divisor count-1) exactly cov. Needs count > J unless cov is
/// exactly zero (then every sample is mu).
Eigen::MatrixXd moment_matched_samples(const Eigen::VectorXd& mu,
                                       const Eigen::MatrixXd& cov, int count,
                                       Rng& rng);

/// Generating truth for a time-varying source: sinusoidal means, log-linear
/// variances, constant correlation.
struct TimeVaryingSourceSpec {
  std::string name;
  Eigen::VectorXd mean_base, mean_amp, mean_phase;  // J entries each
  Eigen::VectorXd logvar_base, logvar_slope;
  double rho = 0.5;  // J = 2 only
  double period = 365.0;
};

GaussianSummary time_varying_truth(const TimeVaryingSourceSpec& spec, double t);

/// Time-stamped source samples: `replicates` draws at every time in `times`
/// for each source.
SourceSamples simulate_time_varying_sources(
    const std::vector<TimeVaryingSourceSpec>& specs,
    const std::vector<std::string>& isotope_names, const std::vector<double>& times,
    int replicates, Rng& rng);

}  // namespace isomix
