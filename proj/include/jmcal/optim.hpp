#pragma once

#include <Eigen/Dense>
#include <functional>

namespace jmcal {

struct OptimOptions {
  int max_iter = 500;
  double gtol = 1e-6;  // max-norm of the gradient
  double ftol = 1e-9;  // relative objective change
};

// Objective to minimise. Writes the gradient into `grad` when non-null and
// returns +inf (or NaN) for points outside the domain.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

enum class OptimStatus { GradientTolerance, Stalled, IterationLimit, LineSearchFailed };

struct OptimResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  OptimStatus status = OptimStatus::IterationLimit;
  bool converged = false;
};

// Quasi-Newton (BFGS) minimisation with a strong-Wolfe line search. Accepted
// steps never increase the objective.
//
// Converged means the gradient max-norm fell below gtol, or the relative
// objective change dropped below ftol while the gradient max-norm is below
// sqrt(gtol) (the precision floor of an objective that sums many terms).
OptimResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const OptimOptions& opts);

// Central finite-difference gradient; used by derivative-free objectives
// and by tests that check analytic gradients.
Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double rel_step = 1e-6);

}  // namespace jmcal
