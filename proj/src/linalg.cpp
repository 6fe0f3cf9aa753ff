#include "isomix/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace isomix {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;
constexpr double kLogPi = 1.1447298858494001741434273513531;
}

double normal_logpdf(double x, double mean, double variance) {
  if (!(variance > 0.0)) return -std::numeric_limits<double>::infinity();
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance)) - 0.5 * r * r / variance;
}

double gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) +
         (shape - 1.0) * std::log(x) - rate * x;
}

double inverse_gamma_logpdf(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - rate / x;
}

double multivariate_lgamma(int p, double a) {
  double out = 0.25 * p * (p - 1) * kLogPi;
  for (int j = 1; j <= p; ++j) out += std::lgamma(a + 0.5 * (1.0 - j));
  return out;
}

double inverse_wishart_logpdf(const Eigen::MatrixXd& x, double dof,
                              const Eigen::MatrixXd& scale) {
  const int p = static_cast<int>(x.rows());
  Eigen::LLT<Eigen::MatrixXd> xchol(x);
  if (xchol.info() != Eigen::Success)
    return -std::numeric_limits<double>::infinity();
  Eigen::LLT<Eigen::MatrixXd> schol(scale);
  if (schol.info() != Eigen::Success)
    throw std::invalid_argument("inverse_wishart_logpdf: scale not positive definite");
  const double log_det_x = 2.0 * half_log_det(xchol);
  const double log_det_scale = 2.0 * half_log_det(schol);
  const double trace = xchol.solve(scale).trace();
  return 0.5 * dof * log_det_scale - 0.5 * dof * p * std::log(2.0) -
         multivariate_lgamma(p, 0.5 * dof) -
         0.5 * (dof + p + 1.0) * log_det_x - 0.5 * trace;
}

GaussianDist::GaussianDist(Eigen::VectorXd mu, Eigen::MatrixXd cov)
    : mu_(std::move(mu)), cov_(std::move(cov)) {
  if (cov_.rows() != cov_.cols() || cov_.rows() != mu_.size())
    throw std::invalid_argument("GaussianDist: dimension mismatch");
  chol_.compute(cov_);
  if (chol_.info() != Eigen::Success)
    throw std::invalid_argument("GaussianDist: covariance not positive definite");
  precision_ = chol_.solve(Eigen::MatrixXd::Identity(cov_.rows(), cov_.cols()));
  precision_ = symmetrize(precision_);
  log_norm_ = -0.5 * mu_.size() * kLogTwoPi - half_log_det(chol_);
}

double GaussianDist::logpdf(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd r = x - mu_;
  return log_norm_ - 0.5 * r.dot(chol_.solve(r));
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                  const Eigen::LLT<Eigen::MatrixXd>& cov_chol) {
  const Eigen::VectorXd r = x - mu;
  return -0.5 * x.size() * kLogTwoPi - half_log_det(cov_chol) -
         0.5 * r.dot(cov_chol.solve(r));
}

double half_log_det(const Eigen::LLT<Eigen::MatrixXd>& chol) {
  return chol.matrixLLT().diagonal().array().log().sum();
}

}  // namespace isomix
