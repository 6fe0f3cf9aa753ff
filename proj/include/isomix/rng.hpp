#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace isomix {

/// Deterministic random number source.
///
/// The engine is std::mt19937_64, whose raw output sequence is fully specified
/// by the standard, and every distribution transform below is implemented here
/// rather than delegated to std::*_distribution (those are implementation
/// defined). Identical seeds therefore give bit-identical streams on any
/// platform, which the sampler relies on for reproducible draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent sub-stream derived from a master seed, used to give each
  /// MCMC chain its own generator regardless of execution order.
  static Rng for_stream(std::uint64_t master_seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1].
  double uniform_pos();
  /// Standard normal (Box-Muller, cosine branch).
  double normal();
  /// Gamma(shape, rate) via Marsaglia-Tsang squeeze.
  double gamma(double shape, double rate);
  /// Inverse-gamma(shape, rate): reciprocal of a Gamma(shape, rate) draw.
  double inverse_gamma(double shape, double rate);
  double chi_squared(double dof);

  Eigen::VectorXd normal_vector(Eigen::Index n);
  /// mu + L z with L the lower Cholesky factor of the covariance.
  Eigen::VectorXd mvnormal(const Eigen::VectorXd& mu,
                           const Eigen::LLT<Eigen::MatrixXd>& cov_chol);
  /// Wishart(dof, scale) via the Bartlett decomposition.
  Eigen::MatrixXd wishart(double dof, const Eigen::MatrixXd& scale);
  Eigen::MatrixXd inverse_wishart(double dof, const Eigen::MatrixXd& scale);

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer; mixes a master seed with a stream index.
std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t stream);

}  // namespace isomix
