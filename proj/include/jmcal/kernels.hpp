#pragma once

// Data-parallel inner loops behind the quadrature oracle. Each kernel has a
// scalar reference implementation and, on x86-64, an AVX2/FMA variant; the
// variant is chosen once at runtime from CPUID and can be overridden for
// testing (or with JMCAL_KERNELS=scalar in the environment).

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace jmcal::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa);
bool isa_available(Isa isa);
Isa active_isa();
// nullopt restores CPUID-based selection. Throws if `isa` is unavailable.
void force_isa(std::optional<Isa> isa);

// Quadrature nodes in whitened coordinates. Weights include the N(0, I)
// density, so sum(w * f(u)) approximates E[f(u)].
struct NodeView {
  const double* u0;
  const double* u1;
  const double* w;
  std::size_t n;
};

// q(u) = c0 + b0 u0 + b1 u1 - (a00 u0^2 + 2 a01 u0 u1 + a11 u1^2) / 2
struct QuadraticForm {
  double c0, b0, b1, a00, a01, a11;
};

// Probit factors Phi(offset[f] + slope0[f] u0 + slope1[f] u1).
struct FactorView {
  const double* offset;
  const double* slope0;
  const double* slope1;
  std::size_t n;
};

// log sum_k w_k exp(q(u_k)) prod_f Phi(eta_f(u_k)).
double log_integral(const NodeView& nodes, const QuadraticForm& q, const FactorView& factors);
double log_integral(Isa isa, const NodeView& nodes, const QuadraticForm& q, const FactorView& factors);

void normal_cdf(std::span<const double> x, std::span<double> out);
void normal_cdf(Isa isa, std::span<const double> x, std::span<double> out);

void exp(Isa isa, std::span<const double> x, std::span<double> out);

namespace detail {

struct Table {
  void (*normal_cdf)(const double* x, double* out, std::size_t n);
  void (*exp)(const double* x, double* out, std::size_t n);
  // Returns NaN when the linear-scale sum under- or overflows.
  double (*log_integral)(const NodeView& nodes, const QuadraticForm& q, const FactorView& factors);
};

const Table& scalar_table();
#if defined(JMCAL_HAVE_AVX2)
const Table& avx2_table();
#endif

// Log-space evaluation used when the linear-scale sum is not representable.
double log_integral_logspace(const NodeView& nodes, const QuadraticForm& q, const FactorView& factors);

}  // namespace detail

}  // namespace jmcal::kernels
