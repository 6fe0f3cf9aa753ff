#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/bspline.hpp"
#include "isomix/data.hpp"
#include "isomix/optim.hpp"

namespace isomix {

/// MAP-fitted temporal model for one source: a B-spline mean per isotope, a
/// B-spline on each log variance, and (J = 2) one constant cross-isotope
/// correlation estimated on the arctanh scale. Roughness precisions carry
/// Ga(tau_shape, tau_rate) priors and are profiled out in closed form.
struct SourceSplineParams {
  std::string source_name;
  std::vector<std::string> isotope_names;
  BsplineBasis basis{0.0, 1.0, 4, 3};  // shared mean/log-variance knots
  Eigen::MatrixXd beta_prime;          // J x L mean spline weights
  Eigen::MatrixXd beta_sigma;          // J x L log-variance spline weights
  double rho = 0.0;                    // 0 when J = 1
  Eigen::VectorXd tau_prime;           // 2J profiled precisions (means, then log-variances)
  double kappa_sigma = 1.0;            // recorded metadata; not in the objective
  double objective = 0.0;              // attained penalized log-density
  bool converged = false;

  Eigen::Index j() const { return beta_prime.rows(); }
  Eigen::Index l() const { return beta_prime.cols(); }
};

struct SourceSplineOptions {
  int knot_count = 25;
  int degree = 3;
  double anchor_sd = 10.0;  // diffuse prior on each block's first coefficient
  double tau_shape = 2.0;
  double tau_rate = 1.0;
  double kappa_sigma = 1.0;
  double fixed_tau = 0.0;  // > 0: use this precision for every block, no profiling
  int restarts = 5;
  std::uint64_t seed = 1;
  OptimOptions optim;
};

/// Non-convergence after the restart budget; carries the best iterate.
class SourceSplineError : public std::runtime_error {
 public:
  SourceSplineError(const std::string& message, SourceSplineParams best_params)
      : std::runtime_error(message), best(std::move(best_params)) {}
  SourceSplineParams best;
};

/// Fit one source from its time-stamped samples (rows of `samples` parallel
/// to `times`). J must be 1 or 2.
SourceSplineParams fit_source_spline(const std::string& source_name,
                                     const std::vector<std::string>& isotope_names,
                                     const Eigen::MatrixXd& samples,
                                     const std::vector<double>& times,
                                     const SourceSplineOptions& options = {});

/// Fit every source in a time-stamped SourceSamples set.
std::vector<SourceSplineParams> fit_source_splines(
    const SourceSamples& samples, const SourceSplineOptions& options = {});

/// Mean vector and covariance matrix at time t (within the knot span).
GaussianSummary predict_source(const SourceSplineParams& params, double t);

/// Evaluate fitted sources on a time grid in the exchange format consumed by
/// the main model under cutting feedback.
SourceTimetable tabulate_sources(const std::vector<SourceSplineParams>& fits,
                                 const std::vector<double>& times);

/// Max relative error between the analytic gradient of the MAP objective and
/// central finite differences at the given parameters.
double gradient_check(const SourceSplineParams& params,
                      const Eigen::MatrixXd& samples,
                      const std::vector<double>& times,
                      const SourceSplineOptions& options = {});

}  // namespace isomix
