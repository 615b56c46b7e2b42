#include "jmcal/normal.hpp"

#include <cmath>
#include <limits>

namespace jmcal::normal {

double pdf(double x) { return std::exp(-0.5 * x * x - kLogSqrt2Pi); }

double cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

namespace {
// Below this point erfc underflows; use the asymptotic series for the
// ratio Phi(x) / phi(x) = -1/x * (1 - 1/x^2 + 3/x^4 - 15/x^6 + ...).
constexpr double kTail = -30.0;

double tail_ratio(double x) {
  const double r = 1.0 / (x * x);
  return -(1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r)))) / x;
}
}  // namespace

double log_cdf(double x) {
  if (x > 5.0) return std::log1p(-0.5 * std::erfc(x * kInvSqrt2));
  if (x > kTail) return std::log(cdf(x));
  return -0.5 * x * x - kLogSqrt2Pi + std::log(tail_ratio(x));
}

double mills(double x) {
  if (x > kTail) return pdf(x) / cdf(x);
  return 1.0 / tail_ratio(x);
}

double quantile(double p) {
  if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
  if (!(p < 1.0)) return std::numeric_limits<double>::infinity();
  // Bisection bracket then Newton polish.
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int i = 0; i < 3; ++i) {
    const double d = pdf(x);
    if (d <= 0) break;
    x -= (cdf(x) - p) / d;
  }
  return x;
}

}  // namespace jmcal::normal
