#include <algorithm>
#include <cmath>
#include <limits>

#include "jmcal/kernels.hpp"
#include "jmcal/normal.hpp"

namespace jmcal::kernels::detail {

namespace {

inline double quadratic(const QuadraticForm& q, double u0, double u1) {
  return q.c0 + q.b0 * u0 + q.b1 * u1 - 0.5 * (q.a00 * u0 * u0 + 2.0 * q.a01 * u0 * u1 + q.a11 * u1 * u1);
}

void normal_cdf_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] = 0.5 * std::erfc(-x[k] * normal::kInvSqrt2);
}

void exp_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) out[k] = std::exp(x[k]);
}

double log_integral_scalar(const NodeView& nodes, const QuadraticForm& q, const FactorView& f) {
  double qmax = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < nodes.n; ++k) qmax = std::max(qmax, quadratic(q, nodes.u0[k], nodes.u1[k]));
  double sum = 0.0;
  for (std::size_t k = 0; k < nodes.n; ++k) {
    const double u0 = nodes.u0[k];
    const double u1 = nodes.u1[k];
    double v = nodes.w[k] * std::exp(quadratic(q, u0, u1) - qmax);
    for (std::size_t j = 0; j < f.n; ++j) {
      v *= 0.5 * std::erfc(-(f.offset[j] + f.slope0[j] * u0 + f.slope1[j] * u1) * normal::kInvSqrt2);
    }
    sum += v;
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) return std::numeric_limits<double>::quiet_NaN();
  return qmax + std::log(sum);
}

}  // namespace

double log_integral_logspace(const NodeView& nodes, const QuadraticForm& q, const FactorView& f) {
  double best = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t k = 0; k < nodes.n; ++k) {
    if (!(nodes.w[k] > 0.0)) continue;
    const double u0 = nodes.u0[k];
    const double u1 = nodes.u1[k];
    double v = std::log(nodes.w[k]) + quadratic(q, u0, u1);
    for (std::size_t j = 0; j < f.n; ++j) v += normal::log_cdf(f.offset[j] + f.slope0[j] * u0 + f.slope1[j] * u1);
    if (!std::isfinite(v)) continue;
    if (v > best) {
      sum = sum * std::exp(best - v) + 1.0;
      best = v;
    } else {
      sum += std::exp(v - best);
    }
  }
  return best + std::log(sum);
}

const Table& scalar_table() {
  static const Table table{normal_cdf_scalar, exp_scalar, log_integral_scalar};
  return table;
}

}  // namespace jmcal::kernels::detail
