#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#include "jmcal/error.hpp"
#include "jmcal/kernels.hpp"

namespace jmcal::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(JMCAL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("JMCAL_KERNELS"); env && std::string(env) == "scalar") {
    return Isa::Scalar;
  }
  return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<int>& override_slot() {
  static std::atomic<int> slot{-1};
  return slot;
}

const detail::Table& table_for(Isa isa) {
#if defined(JMCAL_HAVE_AVX2)
  if (isa == Isa::Avx2) return detail::avx2_table();
#endif
  (void)isa;
  return detail::scalar_table();
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  if (isa == Isa::Scalar) return true;
  static const bool avx2 = cpu_has_avx2();
  return avx2;
}

Isa active_isa() {
  const int forced = override_slot().load(std::memory_order_relaxed);
  if (forced >= 0) return static_cast<Isa>(forced);
  static const Isa detected = detect();
  return detected;
}

void force_isa(std::optional<Isa> isa) {
  if (isa && !isa_available(*isa)) {
    throw Error(ErrorKind::InvalidArgument, "kernel ISA not available: " + std::string(isa_name(*isa)));
  }
  override_slot().store(isa ? static_cast<int>(*isa) : -1, std::memory_order_relaxed);
}

double log_integral(Isa isa, const NodeView& nodes, const QuadraticForm& q, const FactorView& factors) {
  const double v = table_for(isa).log_integral(nodes, q, factors);
  if (std::isfinite(v)) return v;
  return detail::log_integral_logspace(nodes, q, factors);
}

double log_integral(const NodeView& nodes, const QuadraticForm& q, const FactorView& factors) {
  return log_integral(active_isa(), nodes, q, factors);
}

void normal_cdf(Isa isa, std::span<const double> x, std::span<double> out) {
  if (out.size() < x.size()) throw Error(ErrorKind::InvalidArgument, "normal_cdf: output too small");
  table_for(isa).normal_cdf(x.data(), out.data(), x.size());
}

void normal_cdf(std::span<const double> x, std::span<double> out) { normal_cdf(active_isa(), x, out); }

void exp(Isa isa, std::span<const double> x, std::span<double> out) {
  if (out.size() < x.size()) throw Error(ErrorKind::InvalidArgument, "exp: output too small");
  table_for(isa).exp(x.data(), out.data(), x.size());
}

}  // namespace jmcal::kernels
