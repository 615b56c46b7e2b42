#include <doctest.h>

#include <cmath>

#include "jmcal/optim.hpp"

using namespace jmcal;
using Eigen::VectorXd;

TEST_CASE("BFGS finds the Rosenbrock minimum") {
  const Objective f = [](const VectorXd& x, VectorXd* g) {
    const double a = 1 - x(0), b = x(1) - x(0) * x(0);
    if (g) {
      g->resize(2);
      (*g)(0) = -2 * a - 400 * x(0) * b;
      (*g)(1) = 200 * b;
    }
    return a * a + 100 * b * b;
  };
  VectorXd x0(2);
  x0 << -1.2, 1.0;
  const auto r = minimize_bfgs(f, x0, {});
  CHECK(r.converged);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("BFGS on a convex quadratic matches the linear solve") {
  Eigen::MatrixXd A(3, 3);
  A << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  VectorXd b(3);
  b << 1, -2, 0.5;
  const Objective f = [&](const VectorXd& x, VectorXd* g) {
    if (g) *g = A * x - b;
    return 0.5 * x.dot(A * x) - b.dot(x);
  };
  const auto r = minimize_bfgs(f, VectorXd::Zero(3), {});
  const VectorXd exact = A.ldlt().solve(b);
  CHECK(r.converged);
  CHECK((r.x - exact).norm() < 1e-6);
}

TEST_CASE("domain violations are rejected by the line search") {
  // -log x + x has its minimum at 1; the objective is +inf for x <= 0.
  const Objective f = [](const VectorXd& x, VectorXd* g) {
    if (x(0) <= 0) return HUGE_VAL;
    if (g) *g = VectorXd::Constant(1, 1 - 1 / x(0));
    return x(0) - std::log(x(0));
  };
  const auto r = minimize_bfgs(f, VectorXd::Constant(1, 5.0), {});
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("numeric gradient matches the analytic gradient") {
  const auto f = [](const VectorXd& x) { return std::sin(x(0)) * std::exp(x(1)) + x(0) * x(1) * x(1); };
  VectorXd x(2);
  x << 0.3, -0.7;
  const VectorXd g = numeric_gradient(f, x);
  CHECK(g(0) == doctest::Approx(std::cos(0.3) * std::exp(-0.7) + 0.49).epsilon(1e-8));
  CHECK(g(1) == doctest::Approx(std::sin(0.3) * std::exp(-0.7) + 2 * 0.3 * -0.7).epsilon(1e-8));
}
