#pragma once

namespace jmcal::normal {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double pdf(double x);
double cdf(double x);
// log Phi(x), accurate far into the lower tail.
double log_cdf(double x);
// phi(x) / Phi(x), the derivative of log Phi(x).
double mills(double x);
double quantile(double p);

}  // namespace jmcal::normal
