#include "isomix/compositional.hpp"

#include <cmath>
#include <stdexcept>

namespace isomix {

Composition::Composition(Eigen::VectorXd values) : v_(std::move(values)) {
  if (v_.size() < 2)
    throw std::domain_error("Composition: need at least 2 parts");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < v_.size(); ++k) {
    const double x = v_[k];
    if (!std::isfinite(x) || x <= 0.0 || x >= 1.0)
      throw std::domain_error("Composition: entries must lie strictly in (0,1)");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::domain_error("Composition: entries must sum to 1");
}

Composition closure(const Eigen::VectorXd& v) {
  if (v.size() < 2) throw std::domain_error("closure: need at least 2 parts");
  double sum = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (!std::isfinite(v[k]) || v[k] <= 0.0)
      throw std::domain_error("closure: entries must be finite and positive");
    sum += v[k];
  }
  return Composition(v / sum);
}

Composition perturb(const Composition& p, const Composition& q) {
  if (p.size() != q.size())
    throw std::domain_error("perturb: dimension mismatch");
  return closure(p.values().cwiseProduct(q.values()));
}

IlrBasis IlrBasis::build(Eigen::Index source_count) {
  const Eigen::Index k = source_count;
  if (k < 2) throw std::domain_error("IlrBasis: need at least 2 sources");
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k, k - 1);
  // Balance j splits {j} against {j+1..K}: +sqrt(m/(m+1)) on part j and
  // -1/sqrt(m(m+1)) on the m parts below it.
  for (Eigen::Index j = 0; j < k - 1; ++j) {
    const double m = static_cast<double>(k - 1 - j);
    v(j, j) = std::sqrt(m / (m + 1.0));
    const double tail = -1.0 / std::sqrt(m * (m + 1.0));
    for (Eigen::Index i = j + 1; i < k; ++i) v(i, j) = tail;
  }
  return IlrBasis(std::move(v));
}

Eigen::VectorXd clr(const Composition& p) {
  const Eigen::VectorXd logs = p.values().array().log();
  return logs.array() - logs.mean();
}

Eigen::VectorXd alr(const Composition& p, Eigen::Index denom) {
  if (denom < 0 || denom >= p.size())
    throw std::domain_error("alr: denominator index out of range");
  const double log_denom = std::log(p[denom]);
  Eigen::VectorXd out(p.size() - 1);
  Eigen::Index o = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (k == denom) continue;
    out[o++] = std::log(p[k]) - log_denom;
  }
  return out;
}

IlrCoordinates ilr(const Composition& p, const IlrBasis& basis) {
  if (p.size() != basis.sources())
    throw std::domain_error("ilr: composition does not match basis dimension");
  return basis.matrix().transpose() * clr(p);
}

Composition ilr_inv(const IlrCoordinates& phi, const IlrBasis& basis) {
  if (phi.size() != basis.coords())
    throw std::domain_error("ilr_inv: coordinates do not match basis dimension");
  if (!phi.allFinite())
    throw std::domain_error("ilr_inv: coordinates must be finite");
  Eigen::VectorXd z = basis.matrix() * phi;
  z.array() -= z.maxCoeff();  // stabilize: largest exponent is exp(0) = 1
  return closure(z.array().exp());
}

}  // namespace isomix
