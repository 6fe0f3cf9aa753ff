#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/linalg.hpp"

namespace isomix {

/// Consumer isotope measurements plus per-consumer covariates.
/// N = 0 is permitted in memory (prior-only sampler runs); the file loader
/// rejects empty files.
struct ConsumerDataset {
  Eigen::MatrixXd isotopes;  // N x J, finite
  std::vector<std::string> isotope_names;

  struct Covariate {
    std::vector<std::string> raw;
    std::vector<double> numeric;  // parallel to raw when is_numeric
    bool is_numeric = false;
  };
  std::map<std::string, Covariate> covariates;

  Eigen::Index n() const { return isotopes.rows(); }
  Eigen::Index j() const { return isotopes.cols(); }
  const Covariate& covariate(const std::string& name) const;
  /// Numeric covariate column as a vector; throws if absent or non-numeric.
  Eigen::VectorXd numeric_covariate(const std::string& name) const;
};

/// Raw source isotope samples, per source, optionally time stamped.
struct SourceSamples {
  std::vector<std::string> source_names;   // K, order of first appearance
  std::vector<std::string> isotope_names;  // J
  std::vector<Eigen::MatrixXd> samples;    // per source: M_k x J
  std::vector<std::vector<double>> times;  // per source: empty or length M_k

  Eigen::Index k() const { return static_cast<Eigen::Index>(source_names.size()); }
  Eigen::Index j() const { return static_cast<Eigen::Index>(isotope_names.size()); }
  bool has_times() const;
};

/// TEF data: either raw samples (same layout as SourceSamples) or a direct
/// mean/sd specification with diagonal covariance.
struct TefSamples {
  std::vector<std::string> source_names;
  std::vector<std::string> isotope_names;
  bool direct = false;
  std::vector<Eigen::MatrixXd> samples;    // sample form
  std::vector<Eigen::VectorXd> direct_mu;  // direct form
  std::vector<Eigen::MatrixXd> direct_cov;

  Eigen::Index k() const { return static_cast<Eigen::Index>(source_names.size()); }
  Eigen::Index j() const { return static_cast<Eigen::Index>(isotope_names.size()); }
};

/// Per-source Gaussian summary (mean vector and covariance matrix).
struct GaussianSummary {
  Eigen::VectorXd mu;
  Eigen::MatrixXd cov;
  bool degenerate = false;  // covariance rank deficient at summarization time
};

struct SourceSummary {
  std::vector<std::string> source_names;
  std::vector<std::string> isotope_names;
  std::vector<GaussianSummary> by_source;

  Eigen::Index k() const { return static_cast<Eigen::Index>(source_names.size()); }
  Eigen::Index j() const { return static_cast<Eigen::Index>(isotope_names.size()); }
};

using TefSummary = SourceSummary;

/// Elemental concentrations q in (0,1], one row per source, column per isotope.
struct ConcentrationTable {
  std::vector<std::string> source_names;
  std::vector<std::string> isotope_names;
  Eigen::MatrixXd q;  // K x J
};

/// Time-indexed source summaries (the cutting-feedback boundary with the
/// source spline stage): per source, summaries at a grid of times.
struct SourceTimetable {
  std::vector<std::string> source_names;
  std::vector<std::string> isotope_names;
  std::vector<std::vector<double>> times;           // per source, ascending
  std::vector<std::vector<GaussianSummary>> entries;  // parallel to times

  Eigen::Index k() const { return static_cast<Eigen::Index>(source_names.size()); }
  /// Summary for source k at time t (match within tolerance); throws when the
  /// time is not tabulated.
  const GaussianSummary& at(Eigen::Index source, double t, double tol = 1e-9) const;
};

/// Sample mean and unbiased sample covariance per source (divisor M_k - 1).
/// Degenerate covariances are flagged, not repaired; jitter is applied only
/// when a summary later enters a multivariate normal density.
SourceSummary empirical_bayes_summarize(const SourceSamples& samples);
TefSummary empirical_bayes_summarize(const TefSamples& samples);

/// Covariance used inside normal densities: +1e-8 diagonal jitter when the
/// raw summary covariance is not positive definite.
Eigen::MatrixXd regularized_cov(const Eigen::MatrixXd& cov);

// -- Loaders ----------------------------------------------------------------
// All loaders throw std::runtime_error carrying "path:line:" context.

ConsumerDataset load_consumers(const std::string& path,
                               const std::vector<std::string>& isotope_names);
SourceSamples load_sources(const std::string& path);
TefSamples load_tefs(const std::string& path,
                     const std::vector<std::string>& expected_sources = {},
                     const std::vector<std::string>& isotope_names = {});
ConcentrationTable load_concentrations(const std::string& path,
                                       const std::vector<std::string>& expected_sources,
                                       const std::vector<std::string>& isotope_names);
SourceTimetable load_trajectories(const std::string& path);

void save_consumers(const std::string& path, const ConsumerDataset& data);
void save_sources(const std::string& path, const SourceSamples& data);
void save_tefs(const std::string& path, const TefSamples& data);
void save_trajectories(const std::string& path, const SourceTimetable& table);

// -- Iso-space geometry ------------------------------------------------------

/// Convex-hull membership report for J = 2. For J != 2 the report is marked
/// not computed (there is no planar iso-space plot then).
struct IsospaceReport {
  bool computed = false;
  std::vector<Eigen::Vector2d> corrected_means;  // TEF-corrected source means
  std::vector<Eigen::Vector2d> hull;             // counter-clockwise vertices
  struct Entry {
    bool inside = false;
    double distance = 0.0;  // distance to hull when outside, else 0
  };
  std::vector<Entry> consumers;
};

IsospaceReport isospace_check(const ConsumerDataset& consumers,
                              const SourceSummary& sources,
                              const TefSummary& tefs);

}  // namespace isomix
