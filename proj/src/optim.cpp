#include "isomix/optim.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

namespace isomix {

OptimResult minimize(const ObjectiveFn& fg, Eigen::VectorXd x0,
                     const OptimOptions& options) {
  const Eigen::Index dim = x0.size();
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd grad(dim);
  double value = fg(x, grad);
  if (!std::isfinite(value))
    throw std::invalid_argument("minimize: objective not finite at start");
  if (dim == 0) return {x, value, 0.0, 0, true};

  struct Pair {
    Eigen::VectorXd s, y;
    double rho;
  };
  std::deque<Pair> history;

  OptimResult result;
  bool small_improvement = false;
  bool stalled = false;  // line search could not improve further
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (grad.cwiseAbs().maxCoeff() < options.grad_tol && small_improvement) break;

    // Two-loop recursion for the search direction.
    Eigen::VectorXd direction = -grad;
    std::vector<double> alphas(history.size());
    for (std::size_t h = history.size(); h-- > 0;) {
      const Pair& p = history[h];
      alphas[h] = p.rho * p.s.dot(direction);
      direction -= alphas[h] * p.y;
    }
    if (!history.empty()) {
      const Pair& last = history.back();
      direction *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t h = 0; h < history.size(); ++h) {
      const Pair& p = history[h];
      const double beta = p.rho * p.y.dot(direction);
      direction += (alphas[h] - beta) * p.s;
    }
    if (direction.dot(grad) >= 0.0) {
      // Not a descent direction (stale curvature); fall back to steepest
      // descent and drop the history.
      direction = -grad;
      history.clear();
    }

    // Armijo backtracking.
    const double slope = grad.dot(direction);
    double step = 1.0;
    Eigen::VectorXd x_new(dim), grad_new(dim);
    double value_new = value;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * direction;
      value_new = fg(x_new, grad_new);
      if (std::isfinite(value_new) && value_new <= value + 1e-4 * step * slope) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) {
      stalled = true;
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = grad_new - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm()) {
      history.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(history.size()) > options.memory) history.pop_front();
    }

    const double improvement =
        std::abs(value - value_new) / std::max(1.0, std::abs(value));
    small_improvement = improvement < options.rel_tol;
    x = std::move(x_new);
    grad = grad_new;
    value = value_new;
  }

  result.x = std::move(x);
  result.value = value;
  result.gradient_norm = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  result.iterations = iter;
  result.converged = result.gradient_norm < options.grad_tol &&
                     (small_improvement || stalled);
  return result;
}

}  // namespace isomix
