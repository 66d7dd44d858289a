#include "attrgap/optim.hpp"

#include <cmath>
#include <limits>

namespace attrgap::optim {

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

bool finite(double v) { return std::isfinite(v); }

}  // namespace

Result minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const Options& opts) {
  const auto n = x0.size();
  Result r;
  r.x = std::move(x0);
  r.grad.resize(n);
  r.f = f(r.x, &r.grad);
  if (!finite(r.f)) {
    r.message = "objective not finite at starting point";
    return r;
  }

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  Eigen::VectorXd g_new(n);

  for (r.iterations = 0; r.iterations < opts.max_iterations; ++r.iterations) {
    if (inf_norm(r.grad) < opts.grad_tol) {
      r.converged = true;
      r.message = "gradient tolerance reached";
      return r;
    }
    Eigen::VectorXd p = -h * r.grad;
    double slope = r.grad.dot(p);
    if (!(slope < 0)) {
      h.setIdentity();
      fresh = true;
      p = -r.grad;
      slope = r.grad.dot(p);
    }
    // First step from a fresh approximation is capped to unit length.
    double step = 1.0;
    if (fresh) step = std::min(1.0, 1.0 / std::max(p.norm(), 1e-300));

    bool accepted = false;
    double f_new = 0;
    Eigen::VectorXd x_new;
    for (int k = 0; k < opts.max_backtracks; ++k) {
      x_new = r.x + step * p;
      f_new = f(x_new, &g_new);
      if (finite(f_new) && f_new <= r.f + opts.armijo_c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= opts.backtrack;
    }
    if (!accepted) {
      if (!fresh) {
        h.setIdentity();
        fresh = true;
        continue;
      }
      r.message = "line search failed";
      return r;
    }

    Eigen::VectorXd s = x_new - r.x;
    Eigen::VectorXd y = g_new - r.grad;
    double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) h *= sy / y.squaredNorm();
      double rho = 1.0 / sy;
      Eigen::VectorXd hy = h * y;
      h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
           rho * (hy * s.transpose() + s * hy.transpose());
      fresh = false;
    }
    bool stalled = std::abs(r.f - f_new) <= 1e-16 * std::max(1.0, std::abs(r.f)) &&
                   s.norm() <= 1e-14 * std::max(1.0, r.x.norm());
    r.x = std::move(x_new);
    r.f = f_new;
    r.grad = g_new;
    if (stalled) {
      r.converged = inf_norm(r.grad) < opts.grad_tol;
      r.message = r.converged ? "gradient tolerance reached" : "no further progress";
      ++r.iterations;
      return r;
    }
  }
  r.converged = inf_norm(r.grad) < opts.grad_tol;
  r.message = r.converged ? "gradient tolerance reached" : "iteration limit reached";
  return r;
}

Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x) {
  const auto n = x.size();
  Eigen::MatrixXd hess(n, n);
  Eigen::VectorXd gp(n), gm(n);
  Eigen::VectorXd xp = x, xm = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    double h = 1e-5 * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    f(xp, &gp);
    f(xm, &gm);
    hess.col(j) = (gp - gm) / (2 * h);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return 0.5 * (hess + hess.transpose());
}

Result newton_polish(const Objective& f, Result r, const Options& opts, int max_steps) {
  const auto n = r.x.size();
  Eigen::VectorXd g_new(n);
  for (int k = 0; k < max_steps && inf_norm(r.grad) >= opts.grad_tol; ++k) {
    Eigen::MatrixXd hess = fd_hessian(f, r.x);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    Eigen::VectorXd p = -ldlt.solve(r.grad);
    if (!p.allFinite()) break;
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0;
    for (int b = 0; b < 30; ++b) {
      x_new = r.x + step * p;
      f_new = f(x_new, &g_new);
      if (finite(f_new) && f_new <= r.f + 1e-12 * std::max(1.0, std::abs(r.f)) &&
          inf_norm(g_new) < inf_norm(r.grad)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    r.x = std::move(x_new);
    r.f = f_new;
    r.grad = g_new;
    ++r.iterations;
  }
  r.converged = inf_norm(r.grad) < opts.grad_tol;
  if (r.converged) r.message = "gradient tolerance reached";
  return r;
}

}  // namespace attrgap::optim
