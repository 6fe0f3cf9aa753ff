#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/model.hpp"
#include "isomix/rng.hpp"

namespace isomix {

struct McmcConfig {
  int chains = 3;
  int iterations = 50000;
  int burn_in = 10000;
  int thin = 20;
  std::uint64_t seed = 1;
  int adapt_window = 50;  // proposal adaptation batch size during burn-in
  int threads = 1;
};

/// Toggles for reduced-model runs (prior-only sampling, conjugate checks,
/// joint-distribution tests). Defaults run the full posterior.
struct SamplerOptions {
  bool include_likelihood = true;
  bool update_phi = true;
  bool update_beta = true;
  bool update_latents = true;  // s and c
  bool update_sigma = true;
  bool update_kappa = true;
  bool update_tau = true;
};

/// Retained draws for one chain. Latent source/TEF realizations are kept
/// only as running means (they are per-consumer-by-source matrices and would
/// dominate memory otherwise); everything else is stored per draw.
struct ChainDraws {
  std::vector<Eigen::MatrixXd> beta;         // (K-1) x L
  std::vector<Eigen::MatrixXd> phi;          // N x (K-1)
  std::vector<Eigen::VectorXd> kappa;        // K-1
  std::vector<Eigen::VectorXd> tau;          // K-1 or empty
  std::vector<Eigen::MatrixXd> sigma;        // J x J
  std::vector<Eigen::MatrixXd> proportions;  // N x K
  std::vector<Eigen::MatrixXd> means;        // N x J mixture means
  std::vector<double> deviance;              // -2 log-likelihood
  std::vector<int> iteration;                // 1-based sweep index per draw

  Eigen::MatrixXd s_mean;  // (N*K) x J running mean over retained draws
  Eigen::MatrixXd c_mean;

  std::map<std::string, double> acceptance;  // post-burn-in acceptance rates

  int size() const { return static_cast<int>(deviance.size()); }
};

struct PosteriorDraws {
  McmcConfig config;
  std::vector<std::string> scalar_labels;  // labels for scalar_matrix columns
  std::vector<std::string> source_names;
  Eigen::Index n = 0, jdim = 0, kdim = 0, ldim = 0;
  std::vector<ChainDraws> chains;

  int retained_per_chain() const {
    return chains.empty() ? 0 : chains.front().size();
  }
  int total_draws() const;
};

/// One full sweep of the update schedule, with persistent adaptive proposal
/// scales. Update order: phi (random-walk Metropolis per consumer), beta
/// (random-walk Metropolis per coordinate row), joint beta/phi translations
/// (a scalar Metropolis move plus a prior-refresh move per regression
/// coefficient), s and c (conjugate Gaussian Gibbs), Sigma (inverse-Wishart
/// Gibbs), kappa (inverse-gamma Gibbs), tau (gamma Gibbs).
///
/// The phi and translation steps score proposals against the collapsed
/// likelihood (source/TEF latents integrated out); the latents are redrawn
/// from their exact conditionals later in the same sweep, so the sweep still
/// targets the joint posterior. A translation move shifts one coefficient
/// beta(k, c) and every phi entry by the matching change in the linear
/// predictor, leaving phi - gamma untouched; the random-effect prior terms
/// cancel, so the population can slide along weakly identified directions
/// that the tight conditional beta | phi steps cannot cross. Each coefficient
/// also gets an independence proposal from its marginal prior, which mixes
/// across the prior-scale flat regions that appear when proportions pin to a
/// simplex face. Adaptation moves proposal scales toward 0.44 (scalar) or
/// 0.30 (block) acceptance and must be disabled after burn-in.
class Sweeper {
 public:
  Sweeper(const ModelContext& model, const SamplerOptions& options);

  /// Run one sweep in place. `adapt` enables Robbins-Monro scale updates.
  void sweep(const ModelContext& model, ParameterState& state, Rng& rng,
             bool adapt);

  /// Acceptance rates since the last reset, keyed "phi", "beta",
  /// "translation", "refresh", and "translation_block".
  std::map<std::string, double> acceptance_rates() const;
  void reset_acceptance_counts();

  const SamplerOptions& options() const { return options_; }

 private:
  void update_phi(const ModelContext& model, ParameterState& state, Rng& rng,
                  bool adapt);
  void update_beta(const ModelContext& model, ParameterState& state, Rng& rng,
                   bool adapt);
  void update_translation(const ModelContext& model, ParameterState& state,
                          Rng& rng, bool adapt);
  void update_latents(const ModelContext& model, ParameterState& state, Rng& rng);
  void update_sigma(const ModelContext& model, ParameterState& state, Rng& rng);
  void update_kappa(const ModelContext& model, ParameterState& state, Rng& rng);
  void update_tau(const ModelContext& model, ParameterState& state, Rng& rng);
  void adapt_scale(double& log_scale, int& batch_accepts, int& batch_count,
                   int& batch_index, double target);

  SamplerOptions options_;
  double target_phi_ = 0.3;
  double target_beta_ = 0.3;
  std::vector<double> phi_log_scale_;    // per consumer
  std::vector<double> beta_log_scale_;   // per coordinate row
  std::vector<double> trans_log_scale_;  // per coefficient, row-major
  std::vector<int> phi_batch_accepts_, phi_batch_count_, phi_batch_index_;
  std::vector<int> beta_batch_accepts_, beta_batch_count_, beta_batch_index_;
  std::vector<int> trans_batch_accepts_, trans_batch_count_, trans_batch_index_;
  long phi_accepts_ = 0, phi_proposals_ = 0;
  long beta_accepts_ = 0, beta_proposals_ = 0;
  long trans_accepts_ = 0, trans_proposals_ = 0;
  long refresh_accepts_ = 0, refresh_proposals_ = 0;
  // Running moments of vec(beta) feeding the block translation proposal.
  Eigen::VectorXd mv_mean_;
  Eigen::MatrixXd mv_m2_;
  long mv_count_ = 0;
  double mv_log_scale_ = 0.0;
  int mv_batch_accepts_ = 0, mv_batch_count_ = 0, mv_batch_index_ = 0;
  long mv_accepts_ = 0, mv_proposals_ = 0;
  int adapt_window_ = 50;
};

/// Multi-chain run. Chain c draws from Rng::for_stream(config.seed, c), so
/// results are bit-identical for a given seed regardless of thread count.
/// Throws std::runtime_error if no finite-density initial state is found
/// within 100 attempts.
PosteriorDraws run(const ModelContext& model, const McmcConfig& config,
                   const SamplerOptions& options = {});

/// Labeled scalar projection of one chain: rows are retained draws, columns
/// follow PosteriorDraws::scalar_labels (beta, kappa, tau, sigma lower
/// triangle, dietary proportions, deviance).
Eigen::MatrixXd scalar_matrix(const PosteriorDraws& draws, int chain);

struct GelmanRubinResult {
  std::vector<std::string> labels;
  Eigen::VectorXd rhat;
  std::vector<bool> degenerate;  // zero within-chain variance: rhat is NaN
  /// Largest R-hat over non-degenerate parameters (NaN if all degenerate).
  double worst() const;
};

/// Potential scale reduction per scalar parameter; needs >= 2 chains and
/// >= 10 retained draws per chain.
GelmanRubinResult gelman_rubin(const PosteriorDraws& draws);

}  // namespace isomix
