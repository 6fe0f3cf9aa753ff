#pragma once

#include <Eigen/Dense>

namespace isomix {

double normal_logpdf(double x, double mean, double variance);
double gamma_logpdf(double x, double shape, double rate);
double inverse_gamma_logpdf(double x, double shape, double rate);
double multivariate_lgamma(int p, double a);
double inverse_wishart_logpdf(const Eigen::MatrixXd& x, double dof,
                              const Eigen::MatrixXd& scale);

/// Frozen multivariate normal: mean, covariance, and cached Cholesky factor.
/// Used for the source/TEF random-effect terms, which are evaluated many
/// times per sweep against fixed empirical-Bayes hyperparameters.
class GaussianDist {
 public:
  GaussianDist() = default;
  GaussianDist(Eigen::VectorXd mu, Eigen::MatrixXd cov);

  const Eigen::VectorXd& mu() const { return mu_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  const Eigen::LLT<Eigen::MatrixXd>& chol() const { return chol_; }
  /// Precision matrix (covariance inverse).
  const Eigen::MatrixXd& precision() const { return precision_; }
  double logpdf(const Eigen::VectorXd& x) const;

 private:
  Eigen::VectorXd mu_;
  Eigen::MatrixXd cov_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::MatrixXd precision_;
  double log_norm_ = 0.0;  // -0.5 * (dim log 2pi + log det cov)
};

/// Log-density of a J-vector under N(mu, cov) given the covariance Cholesky.
double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                  const Eigen::LLT<Eigen::MatrixXd>& cov_chol);

/// Sum of log of Cholesky diagonal, i.e. 0.5 * log det.
double half_log_det(const Eigen::LLT<Eigen::MatrixXd>& chol);

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

}  // namespace isomix
