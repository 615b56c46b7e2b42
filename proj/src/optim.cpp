#include "jmcal/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace jmcal {

namespace {

struct LinePoint {
  double step = 0.0;
  double value = 0.0;
  double slope = 0.0;
  Eigen::VectorXd grad;
};

class LineSearch {
 public:
  LineSearch(const Objective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir, int& evals)
      : f_(f), x_(x), dir_(dir), evals_(evals) {}

  LinePoint eval(double step) {
    LinePoint p;
    p.step = step;
    p.grad.resize(x_.size());
    p.value = f_(x_ + step * dir_, &p.grad);
    ++evals_;
    p.slope = std::isfinite(p.value) ? p.grad.dot(dir_) : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(p.value)) p.value = std::numeric_limits<double>::infinity();
    return p;
  }

  // Strong Wolfe conditions, Nocedal & Wright algorithms 3.5 / 3.6.
  bool search(const LinePoint& origin, double first_step, LinePoint& out) {
    constexpr double c1 = 1e-4;
    constexpr double c2 = 0.9;
    LinePoint prev = origin;
    double step = first_step;
    for (int i = 0; i < 40; ++i) {
      LinePoint cur = eval(step);
      const bool armijo = cur.value <= origin.value + c1 * step * origin.slope;
      if (!std::isfinite(cur.value) || !armijo || (i > 0 && cur.value >= prev.value)) {
        return zoom(origin, prev, cur, out);
      }
      if (std::abs(cur.slope) <= -c2 * origin.slope) {
        out = std::move(cur);
        return true;
      }
      if (cur.slope >= 0) return zoom(origin, cur, prev, out);
      prev = std::move(cur);
      step *= 2.0;
    }
    out = std::move(prev);
    return out.step > 0;
  }

 private:
  bool zoom(const LinePoint& origin, LinePoint lo, LinePoint hi, LinePoint& out) {
    constexpr double c1 = 1e-4;
    constexpr double c2 = 0.9;
    for (int i = 0; i < 40; ++i) {
      double step = 0.5 * (lo.step + hi.step);
      // Safeguarded quadratic interpolation using lo's value and slope.
      if (std::isfinite(hi.value) && std::isfinite(lo.slope)) {
        const double d = hi.step - lo.step;
        const double denom = 2.0 * (hi.value - lo.value - lo.slope * d);
        if (denom > 0) {
          const double trial = lo.step - lo.slope * d * d / denom;
          const double a = std::min(lo.step, hi.step);
          const double b = std::max(lo.step, hi.step);
          if (trial > a + 0.1 * (b - a) && trial < b - 0.1 * (b - a)) step = trial;
        }
      }
      LinePoint cur = eval(step);
      const bool armijo = cur.value <= origin.value + c1 * step * origin.slope;
      if (!std::isfinite(cur.value) || !armijo || cur.value >= lo.value) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.slope) <= -c2 * origin.slope) {
          out = std::move(cur);
          return true;
        }
        if (cur.slope * (hi.step - lo.step) >= 0) hi = lo;
        lo = std::move(cur);
      }
      if (std::abs(hi.step - lo.step) < 1e-16 * std::max(1.0, lo.step)) break;
    }
    // Accept a point with sufficient decrease even without the curvature
    // condition; the caller skips the quasi-Newton update in that case.
    if (lo.step > 0 && lo.value < origin.value) {
      out = std::move(lo);
      return true;
    }
    return false;
  }

  const Objective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& dir_;
  int& evals_;
};

}  // namespace

OptimResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const OptimOptions& opts) {
  const Eigen::Index n = x0.size();
  OptimResult res;
  res.x = std::move(x0);
  res.gradient.resize(n);
  res.value = f(res.x, &res.gradient);
  res.evaluations = 1;
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) {
    res.status = OptimStatus::LineSearchFailed;
    return res;
  }

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  bool reset_once = false;
  const double loose_gtol = std::sqrt(opts.gtol);

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter;
    const double gmax = res.gradient.lpNorm<Eigen::Infinity>();
    if (gmax < opts.gtol) {
      res.status = OptimStatus::GradientTolerance;
      res.converged = true;
      return res;
    }
    Eigen::VectorXd dir = -H * res.gradient;
    double slope = dir.dot(res.gradient);
    if (!(slope < 0)) {
      H.setIdentity();
      dir = -res.gradient;
      slope = dir.dot(res.gradient);
    }
    const double first = scaled ? 1.0 : std::min(1.0, 1.0 / std::max(gmax, 1e-12));

    LinePoint origin;
    origin.value = res.value;
    origin.slope = slope;
    origin.grad = res.gradient;
    LinePoint next;
    LineSearch ls(f, res.x, dir, res.evaluations);
    if (!ls.search(origin, first, next)) {
      if (!reset_once && scaled) {
        H.setIdentity();
        scaled = false;
        reset_once = true;
        continue;
      }
      res.status = OptimStatus::LineSearchFailed;
      res.converged = gmax < loose_gtol;
      return res;
    }
    reset_once = false;

    const Eigen::VectorXd s = next.step * dir;
    const Eigen::VectorXd y = next.grad - res.gradient;
    const double previous = res.value;
    res.x += s;
    res.value = next.value;
    res.gradient = next.grad;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        H = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += (rho * rho * yHy + rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
    }

    const double rel = std::abs(previous - res.value) / std::max(1.0, std::abs(res.value));
    if (rel < opts.ftol && res.gradient.lpNorm<Eigen::Infinity>() < loose_gtol) {
      res.iterations = iter + 1;
      res.status = OptimStatus::Stalled;
      res.converged = true;
      return res;
    }
  }
  res.iterations = opts.max_iter;
  res.status = OptimStatus::IterationLimit;
  res.converged = res.gradient.lpNorm<Eigen::Infinity>() < opts.gtol;
  return res;
}

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double rel_step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double h = rel_step * std::max(1.0, std::abs(x(k)));
    xp(k) = x(k) + h;
    const double fp = f(xp);
    xp(k) = x(k) - h;
    const double fm = f(xp);
    xp(k) = x(k);
    g(k) = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace jmcal
