#include "isomix/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace isomix {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t stream) {
  // splitmix64 applied to master + golden-ratio spaced stream offsets.
  std::uint64_t z = master_seed + (stream + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng Rng::for_stream(std::uint64_t master_seed, std::uint64_t stream) {
  return Rng(derive_seed(master_seed, stream));
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform_pos() { return 1.0 - uniform(); }

double Rng::normal() {
  const double r = std::sqrt(-2.0 * std::log(uniform_pos()));
  return r * std::cos(kTwoPi * uniform());
}

double Rng::gamma(double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw std::invalid_argument("gamma: shape and rate must be positive");
  if (shape < 1.0) {
    // Boost to shape+1, then scale back.
    const double u = uniform_pos();
    return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_pos();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
  }
}

double Rng::inverse_gamma(double shape, double rate) {
  return 1.0 / gamma(shape, rate);
}

double Rng::chi_squared(double dof) { return gamma(0.5 * dof, 0.5); }

Eigen::VectorXd Rng::normal_vector(Eigen::Index n) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
  return z;
}

Eigen::VectorXd Rng::mvnormal(const Eigen::VectorXd& mu,
                              const Eigen::LLT<Eigen::MatrixXd>& cov_chol) {
  return mu + cov_chol.matrixL() * normal_vector(mu.size());
}

Eigen::MatrixXd Rng::wishart(double dof, const Eigen::MatrixXd& scale) {
  const Eigen::Index p = scale.rows();
  if (dof <= static_cast<double>(p) - 1.0)
    throw std::invalid_argument("wishart: dof must exceed dimension - 1");
  Eigen::LLT<Eigen::MatrixXd> chol(scale);
  if (chol.info() != Eigen::Success)
    throw std::invalid_argument("wishart: scale matrix not positive definite");
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(chi_squared(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal();
  }
  const Eigen::MatrixXd la = chol.matrixL() * a;
  Eigen::MatrixXd w = la * la.transpose();
  return 0.5 * (w + w.transpose());
}

Eigen::MatrixXd Rng::inverse_wishart(double dof, const Eigen::MatrixXd& scale) {
  // X ~ IW(dof, scale)  <=>  X^{-1} ~ Wishart(dof, scale^{-1})
  const Eigen::Index p = scale.rows();
  Eigen::LLT<Eigen::MatrixXd> chol(scale);
  if (chol.info() != Eigen::Success)
    throw std::invalid_argument("inverse_wishart: scale matrix not positive definite");
  const Eigen::MatrixXd scale_inv =
      chol.solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd w = wishart(dof, 0.5 * (scale_inv + scale_inv.transpose()));
  Eigen::LLT<Eigen::MatrixXd> wchol(w);
  Eigen::MatrixXd x = wchol.solve(Eigen::MatrixXd::Identity(p, p));
  return 0.5 * (x + x.transpose());
}

}  // namespace isomix
