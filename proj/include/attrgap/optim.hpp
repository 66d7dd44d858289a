#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace attrgap::optim {

// Returns f(x); fills *grad when non-null.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct Options {
  int max_iterations = 500;
  double grad_tol = 1e-8;  // on the infinity norm
  double armijo_c1 = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 60;
};

struct Result {
  Eigen::VectorXd x;
  double f = 0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

/// Minimizes f by BFGS on the inverse Hessian with a backtracking Armijo
/// line search. The approximation is reset to a scaled identity whenever the
/// search direction stops being a descent direction.
Result minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const Options& opts = {});

/// Newton steps using a finite-difference Hessian of the analytic gradient.
/// Used to tighten a BFGS solution; never accepts a step that raises f.
Result newton_polish(const Objective& f, Result start, const Options& opts = {},
                     int max_steps = 25);

/// Central differences of the gradient, symmetrized.
Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x);

}  // namespace attrgap::optim
