#pragma once

#include <Eigen/Dense>

namespace isomix {

/// A point on the K-simplex: strictly positive proportions summing to one.
/// Construction validates the invariants (entries in (0,1), unit sum, K >= 2)
/// and throws std::domain_error on violation.
class Composition {
 public:
  explicit Composition(Eigen::VectorXd values);

  Eigen::Index size() const { return v_.size(); }
  double operator[](Eigen::Index k) const { return v_[k]; }
  const Eigen::VectorXd& values() const { return v_; }

 private:
  Eigen::VectorXd v_;
};

/// Orthonormal balance basis for the ilr transform: a K x (K-1) matrix whose
/// columns are orthonormal and sum to zero. Built from the sequential binary
/// partition {1 | 2..K}, {2 | 3..K}, ... in closed form, so the same K always
/// yields the identical matrix; the leading nonzero entry of each column is
/// positive.
class IlrBasis {
 public:
  static IlrBasis build(Eigen::Index source_count);

  const Eigen::MatrixXd& matrix() const { return v_; }
  Eigen::Index sources() const { return v_.rows(); }
  Eigen::Index coords() const { return v_.cols(); }

 private:
  explicit IlrBasis(Eigen::MatrixXd v) : v_(std::move(v)) {}
  Eigen::MatrixXd v_;
};

/// Unconstrained (K-1)-vector of ilr coordinates.
using IlrCoordinates = Eigen::VectorXd;

/// Normalize a strictly positive vector to unit sum.
Composition closure(const Eigen::VectorXd& v);

/// Simplex perturbation: closure of the elementwise product.
Composition perturb(const Composition& p, const Composition& q);

/// Centred log-ratio: log(p / geometric mean). Output sums to zero.
Eigen::VectorXd clr(const Composition& p);

/// Additive log-ratio with the given denominator index; the denominator
/// coordinate is dropped from the output.
Eigen::VectorXd alr(const Composition& p, Eigen::Index denom);

/// Isometric log-ratio: V^T clr(p).
IlrCoordinates ilr(const Composition& p, const IlrBasis& basis);

/// Inverse ilr: closure(exp(V phi)), stabilized by subtracting the max of
/// V phi before exponentiating so large coordinates cannot overflow.
Composition ilr_inv(const IlrCoordinates& phi, const IlrBasis& basis);

}  // namespace isomix
