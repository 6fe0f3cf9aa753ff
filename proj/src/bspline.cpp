#include "isomix/bspline.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace isomix {

BsplineBasis::BsplineBasis(double a, double b, int knot_count, int degree)
    : a_(a), b_(b), degree_(degree) {
  if (!(b > a)) throw std::invalid_argument("spline interval must have b > a");
  if (knot_count < 2) throw std::invalid_argument("need at least 2 knots");
  if (degree < 1) throw std::invalid_argument("spline degree must be at least 1");
  l_ = static_cast<Eigen::Index>(knot_count + degree - 1);

  knots_.reserve(static_cast<std::size_t>(knot_count + 2 * degree));
  for (int i = 0; i < degree; ++i) knots_.push_back(a);
  for (int i = 0; i < knot_count; ++i)
    knots_.push_back(a + (b - a) * static_cast<double>(i) /
                             static_cast<double>(knot_count - 1));
  for (int i = 0; i < degree; ++i) knots_.push_back(b);
  // Pin the endpoints exactly; the linear interpolation above can drift in
  // the last bit.
  knots_[static_cast<std::size_t>(degree)] = a;
  knots_[static_cast<std::size_t>(degree + knot_count - 1)] = b;
}

Eigen::VectorXd BsplineBasis::evaluate(double t) const {
  if (!(t >= a_ && t <= b_))
    throw std::domain_error("spline evaluated at " + std::to_string(t) +
                            " outside [" + std::to_string(a_) + ", " +
                            std::to_string(b_) + "]");

  // Locate the knot span: knots_[s] <= t < knots_[s+1], clamped so t == b
  // lands in the last non-empty span.
  Eigen::Index s = degree_;
  const Eigen::Index last_span = l_ - 1;
  while (s < last_span && t >= knots_[static_cast<std::size_t>(s + 1)]) ++s;

  std::vector<double> left(static_cast<std::size_t>(degree_) + 1);
  std::vector<double> right(static_cast<std::size_t>(degree_) + 1);
  std::vector<double> n(static_cast<std::size_t>(degree_) + 1);
  n[0] = 1.0;
  for (int d = 1; d <= degree_; ++d) {
    left[static_cast<std::size_t>(d)] = t - knots_[static_cast<std::size_t>(s + 1 - d)];
    right[static_cast<std::size_t>(d)] = knots_[static_cast<std::size_t>(s + d)] - t;
    double saved = 0.0;
    for (int r = 0; r < d; ++r) {
      const double denom = right[static_cast<std::size_t>(r + 1)] +
                           left[static_cast<std::size_t>(d - r)];
      const double temp = n[static_cast<std::size_t>(r)] / denom;
      n[static_cast<std::size_t>(r)] =
          saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(d - r)] * temp;
    }
    n[static_cast<std::size_t>(d)] = saved;
  }

  Eigen::VectorXd out = Eigen::VectorXd::Zero(l_);
  for (int d = 0; d <= degree_; ++d)
    out[s - degree_ + d] = n[static_cast<std::size_t>(d)];
  return out;
}

Eigen::MatrixXd BsplineBasis::evaluate(const Eigen::VectorXd& t) const {
  Eigen::MatrixXd out(t.size(), l_);
  for (Eigen::Index i = 0; i < t.size(); ++i) out.row(i) = evaluate(t[i]).transpose();
  return out;
}

}  // namespace isomix
