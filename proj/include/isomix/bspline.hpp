#pragma once

#include <Eigen/Dense>
#include <vector>

namespace isomix {

/// B-spline basis on [a, b] built from equally spaced knots with the
/// boundary knots repeated so the basis spans the full interval.
///
/// `knot_count` counts the distinct equally spaced knots including both
/// endpoints, so the basis has knot_count + degree - 1 functions.
/// Evaluation outside [a, b] is refused; the right endpoint is included.
class BsplineBasis {
 public:
  BsplineBasis(double a, double b, int knot_count, int degree);

  Eigen::Index size() const { return l_; }
  int degree() const { return degree_; }
  double a() const { return a_; }
  double b() const { return b_; }
  const std::vector<double>& knots() const { return knots_; }

  /// All basis function values at t (length size(), at most degree+1 nonzero).
  Eigen::VectorXd evaluate(double t) const;

  /// Design block with one row per evaluation point.
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& t) const;

 private:
  double a_;
  double b_;
  int degree_;
  Eigen::Index l_;
  std::vector<double> knots_;
};

}  // namespace isomix
