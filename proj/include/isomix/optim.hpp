#pragma once

#include <Eigen/Dense>
#include <functional>

namespace isomix {

struct OptimOptions {
  int max_iterations = 1000;
  double rel_tol = 1e-8;   // relative objective improvement
  double grad_tol = 1e-6;  // gradient max-norm
  int memory = 8;          // L-BFGS history length
};

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;  // max-norm at x
  int iterations = 0;
  bool converged = false;
};

/// Objective callback: returns f(x) and fills grad with the gradient.
using ObjectiveFn =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

/// Limited-memory BFGS minimization with Armijo backtracking. Convergence is
/// declared when the relative objective improvement drops below rel_tol and
/// the gradient max-norm is below grad_tol.
OptimResult minimize(const ObjectiveFn& fg, Eigen::VectorXd x0,
                     const OptimOptions& options = {});

}  // namespace isomix
