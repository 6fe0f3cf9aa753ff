#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/model.hpp"
#include "isomix/sampler.hpp"

namespace isomix {

struct DicReport {
  double mean_deviance = 0.0;
  double p_d = 0.0;
  double p_v = 0.0;
  double dic_pd = 0.0;
  double dic_pv = 0.0;
};

/// DIC with both effective-parameter estimates: p_v = var(deviance) / 2 and
/// p_d = mean deviance minus the deviance at the posterior mean, with means
/// taken on unconstrained scales (ilr for compositions, log variances plus
/// raw correlations for Sigma).
DicReport dic(const PosteriorDraws& draws, const ModelContext& model);

struct PredictiveReport {
  /// One replicate dataset (N x J) per retained draw, pooled across chains.
  std::vector<Eigen::MatrixXd> replicates;
  std::vector<bool> inside;  // per consumer: inside the central 95% region
  double coverage_95 = 0.0;  // fraction of observations inside
  bool density_computed = false;  // 2-D kernel density grid, J = 2 only
  Eigen::VectorXd grid_x, grid_y;
  Eigen::MatrixXd density;  // grid_y.size() rows x grid_x.size() cols
  std::string notice;
};

/// Posterior predictive replicates and calibration. The central 95% region
/// per consumer is defined by the Mahalanobis depth of its replicate cloud.
PredictiveReport posterior_predictive(const PosteriorDraws& draws,
                                      const ModelContext& model,
                                      std::uint64_t seed);

/// Fraction of retained draws where consumer i eats more of `source` than
/// consumer i_other.
double compare_consumers(const PosteriorDraws& draws, Eigen::Index i,
                         Eigen::Index i_other, Eigen::Index source);

struct PosteriorSummary {
  std::vector<std::string> source_names;
  Eigen::Index n = 0, kdim = 0;
  Eigen::MatrixXd mean, sd;                       // N x K
  Eigen::MatrixXd q025, q25, q50, q75, q975;      // N x K
  Eigen::MatrixXd correlation;                    // K x K, from per-draw
                                                  // population-mean proportions
  bool rhat_available = false;
  GelmanRubinResult rhat;
};

PosteriorSummary summarize(const PosteriorDraws& draws);

/// Monte Carlo standard error of the mean of a correlated series, via batch
/// means with roughly sqrt(n) batches.
double mcse_mean(const Eigen::VectorXd& series);

/// Linear-interpolation sample quantile (same convention throughout).
double sample_quantile(std::vector<double> values, double prob);

}  // namespace isomix
