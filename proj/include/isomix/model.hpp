#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "isomix/bspline.hpp"
#include "isomix/compositional.hpp"
#include "isomix/data.hpp"
#include "isomix/linalg.hpp"

namespace isomix {

/// One term of the linear-predictor formula for the ilr coordinates.
struct Term {
  enum class Kind { Intercept, Linear, Harmonic, Factor, Bspline, Interaction };
  Kind kind = Kind::Intercept;
  std::string covariate;       // empty for intercept/interaction
  double period = 365.0;       // harmonic
  int knot_count = 25;         // bspline
  int degree = 3;              // bspline
  std::vector<Term> parents;   // interaction: exactly two
};

/// Parse a formula string such as
///   "1 + jday + harmonic(jday, 365) + factor(age) + bspline(jday, 25)"
/// or "interaction(harmonic(jday), factor(age))". Terms are '+'-separated;
/// "1" is the intercept and a bare name is a linear term.
std::vector<Term> parse_formula(const std::string& formula);

std::string format_term(const Term& term);
std::string format_formula(const std::vector<Term>& terms);

struct PriorSpec {
  double beta_sd = 10.0;
  double sigma_dof = 0.0;       // 0 resolves to J + 1
  Eigen::MatrixXd sigma_scale;  // empty resolves to identity
  double kappa_shape = 1.0;
  double kappa_rate = 1.0;
  double tau_shape = 2.0;
  double tau_rate = 1.0;
};

struct ModelSpec {
  std::vector<Term> formula{Term{}};  // intercept only by default
  bool use_helmert_contrasts = true;
  PriorSpec priors;
  std::optional<ConcentrationTable> concentration;
};

/// Expanded design matrix with column labels. Columns produced by a bspline
/// term are grouped into a block that carries the random-walk prior; all
/// other columns get the independent normal prior.
struct DesignMatrix {
  Eigen::MatrixXd x;  // N x L
  std::vector<std::string> labels;

  struct SplineBlock {
    Eigen::Index first = 0;
    Eigen::Index count = 0;
  };
  std::vector<SplineBlock> spline_blocks;
  std::vector<BsplineBasis> spline_bases;  // parallel to spline_blocks

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index l() const { return x.cols(); }
};

DesignMatrix build_design_matrix(const ConsumerDataset& dataset,
                                 const ModelSpec& spec);

/// Full parameter state of the posterior.
struct ParameterState {
  Eigen::MatrixXd beta;   // (K-1) x L
  Eigen::MatrixXd phi;    // N x (K-1)
  Eigen::VectorXd kappa;  // K-1, positive
  Eigen::MatrixXd sigma;  // J x J, symmetric positive definite
  std::vector<Eigen::MatrixXd> s;  // N entries, each K x J
  std::vector<Eigen::MatrixXd> c;  // N entries, each K x J
  Eigen::VectorXd tau;    // K-1 when the formula has spline terms, else empty
};

/// gamma[i][k]: without contrasts gamma_ik = x_i . beta_k; with Helmert
/// contrasts coordinate 1 keeps beta_1 and coordinate k >= 2 uses
/// beta_1 + beta_k.
Eigen::MatrixXd linear_predictor(const Eigen::MatrixXd& x,
                                 const Eigen::MatrixXd& beta, bool use_helmert);

/// Mixture mean for one consumer: sum_k p*_k (s_k + c_k) per isotope, where
/// p* applies the concentration adjustment column by column when q is given.
/// p may sit on the simplex boundary here (unlike Composition).
Eigen::VectorXd mixture_mean(const Eigen::VectorXd& p, const Eigen::MatrixXd& s,
                             const Eigen::MatrixXd& c,
                             const Eigen::MatrixXd* q = nullptr);

/// Concentration-adjusted mixing weights: w(k, j) multiplies (s + c)(k, j) in
/// the mixture mean. Without a concentration table every column equals p.
Eigen::MatrixXd mixing_weights(const Eigen::VectorXd& p, const Eigen::MatrixXd* q,
                               Eigen::Index jdim);

/// Gradients of log_joint with respect to the unconstrained parameters.
struct JointGradient {
  Eigen::MatrixXd phi;        // N x (K-1)
  Eigen::MatrixXd beta;       // (K-1) x L
  Eigen::VectorXd log_kappa;  // K-1
  Eigen::VectorXd log_tau;    // K-1 or empty
};

/// Immutable model + data bundle: resolved priors, design matrix, ilr basis,
/// cached source/TEF random-effect distributions. Evaluation methods are
/// const and safe to call concurrently on distinct states.
class ModelContext {
 public:
  ModelContext(ConsumerDataset data, ModelSpec spec, SourceSummary sources,
               TefSummary tefs);

  /// Replace the static source summaries with per-consumer summaries taken
  /// from a fitted trajectory (cutting feedback). `per_consumer` has one
  /// SourceSummary per consumer row.
  void set_time_varying_sources(std::vector<SourceSummary> per_consumer);

  Eigen::Index n() const { return data_.n(); }
  Eigen::Index j() const { return data_.j(); }
  Eigen::Index k() const { return static_cast<Eigen::Index>(sources_.k()); }
  Eigen::Index coords() const { return k() - 1; }
  Eigen::Index l() const { return design_.l(); }
  bool has_splines() const { return !design_.spline_blocks.empty(); }

  const ConsumerDataset& data() const { return data_; }
  const ModelSpec& spec() const { return spec_; }
  const DesignMatrix& design() const { return design_; }
  const IlrBasis& basis() const { return basis_; }
  const SourceSummary& sources() const { return sources_; }
  const TefSummary& tefs() const { return tefs_; }
  bool time_varying() const { return !time_sources_.empty(); }
  double sigma_dof() const { return sigma_dof_; }
  const Eigen::MatrixXd& sigma_scale() const { return sigma_scale_; }
  const Eigen::MatrixXd* concentration() const {
    return spec_.concentration ? &spec_.concentration->q : nullptr;
  }

  /// Source/TEF random-effect prior for consumer i, source k. Summaries with
  /// an exactly zero covariance pin the latent at the mean (fixed() true).
  struct LatentPrior {
    bool fixed = false;
    Eigen::VectorXd mu;
    GaussianDist dist;  // valid only when !fixed
  };
  const LatentPrior& source_prior(Eigen::Index i, Eigen::Index source) const;
  const LatentPrior& tef_prior(Eigen::Index i, Eigen::Index source) const;

  /// Dietary proportions for consumer i at the given state. Extreme phi maps
  /// to the closed simplex (parts may underflow to exactly 0) rather than
  /// throwing like ilr_inv does.
  Eigen::VectorXd proportions(const ParameterState& state, Eigen::Index i) const;
  /// Mixture mean for consumer i at the given state.
  Eigen::VectorXd consumer_mean(const ParameterState& state, Eigen::Index i) const;

  /// Likelihood of the mixture model only (feeds the deviance).
  double log_likelihood(const ParameterState& state) const;
  /// Likelihood contribution of a single consumer given a precomputed
  /// Cholesky of sigma.
  double log_likelihood_row(const ParameterState& state, Eigen::Index i,
                            const Eigen::LLT<Eigen::MatrixXd>& sigma_chol) const;

  /// Likelihood of consumer i with its latent source/TEF values integrated
  /// out: Y_i ~ N(sum_k w_k .* (mu_s + mu_c), sigma + sum_k (w_k w_k') .*
  /// (cov_s + cov_c)), elementwise in the mixing-weight rows w_k. Pinned
  /// latents contribute their mean and no covariance. Used by the phi
  /// Metropolis step (partially collapsed Gibbs) so proposals are not
  /// shackled to the current latent draw.
  double collapsed_likelihood_row(const ParameterState& state, Eigen::Index i) const;

  /// Full joint log-density: likelihood plus every prior term. Returns
  /// -infinity (not an exception) for parameter values outside the support,
  /// including non-positive-definite sigma.
  double log_joint(const ParameterState& state) const;

  /// Joint log-density with the likelihood term removed (prior-only target).
  double log_prior(const ParameterState& state) const;

  /// log-prior of the regression coefficients (normal columns plus
  /// random-walk penalties and anchors on spline blocks).
  double beta_log_prior(const Eigen::MatrixXd& beta,
                        const Eigen::VectorXd& tau) const;
  /// Contribution of coordinate k's phi prior for all consumers.
  double phi_log_prior(const ParameterState& state) const;

  /// Analytic gradient of log_joint (or of log_prior if with_likelihood is
  /// false) with respect to phi, beta, log kappa, log tau.
  JointGradient log_joint_gradient(const ParameterState& state,
                                   bool with_likelihood = true) const;

  /// Initial state per the sampler contract: phi ~ N(0,1), beta = 0,
  /// sigma = identity, kappa = tau = 1, latents at their prior means.
  ParameterState initial_state() const;

  void validate_state(const ParameterState& state) const;

 private:
  void rebuild_latent_priors();

  ConsumerDataset data_;
  ModelSpec spec_;
  SourceSummary sources_;
  TefSummary tefs_;
  std::vector<SourceSummary> time_sources_;  // empty or one per consumer
  DesignMatrix design_;
  IlrBasis basis_;
  double sigma_dof_ = 0.0;
  Eigen::MatrixXd sigma_scale_;
  std::vector<LatentPrior> s_priors_;  // K entries, or N*K when time varying
  std::vector<LatentPrior> c_priors_;  // K entries
};

}  // namespace isomix
