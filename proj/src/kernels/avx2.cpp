// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// and only entered after a CPUID check, so it must not define inline code
// shared with the rest of the library.

#include <immintrin.h>

#include <cmath>
#include <cstdint>
#include <limits>

#include "jmcal/kernels.hpp"

namespace jmcal::kernels::detail {

namespace {

inline __m256d set1(double v) { return _mm256_set1_pd(v); }

template <std::size_t N>
inline __m256d polevl(__m256d x, const double (&c)[N]) {
  __m256d r = set1(c[0]);
  for (std::size_t k = 1; k < N; ++k) r = _mm256_fmadd_pd(r, x, set1(c[k]));
  return r;
}

// Leading coefficient 1 implied.
template <std::size_t N>
inline __m256d p1evl(__m256d x, const double (&c)[N]) {
  __m256d r = _mm256_add_pd(x, set1(c[0]));
  for (std::size_t k = 1; k < N; ++k) r = _mm256_fmadd_pd(r, x, set1(c[k]));
  return r;
}

// exp(x) for x <= 709; results below the normal range flush to zero.
// Cephes range reduction with a (2,3) Pade approximant.
inline __m256d exp_pd(__m256d x) {
  static constexpr double P[] = {1.26177193074810590878E-4, 3.02994407707441961300E-2,
                                 9.99999999999999999910E-1};
  static constexpr double Q[] = {3.00198505138664455042E-6, 2.52448340349684104192E-3,
                                 2.27265548208155028766E-1, 2.00000000000000000009E0};
  const __m256d lo = set1(-708.39);
  const __m256d underflow = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  x = _mm256_max_pd(_mm256_min_pd(x, set1(709.0)), lo);

  const __m256d fx = _mm256_round_pd(_mm256_fmadd_pd(x, set1(1.4426950408889634073599), set1(0.5)),
                                     _MM_FROUND_TO_NEG_INF | _MM_FROUND_NO_EXC);
  x = _mm256_fnmadd_pd(fx, set1(6.93145751953125E-1), x);
  x = _mm256_fnmadd_pd(fx, set1(1.42860682030941723212E-6), x);

  const __m256d xx = _mm256_mul_pd(x, x);
  const __m256d px = _mm256_mul_pd(x, polevl(xx, P));
  const __m256d qx = polevl(xx, Q);
  __m256d r = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
  r = _mm256_fmadd_pd(set1(2.0), r, set1(1.0));

  const __m128i n32 = _mm256_cvtpd_epi32(fx);
  __m256i n64 = _mm256_cvtepi32_epi64(n32);
  n64 = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  r = _mm256_mul_pd(r, _mm256_castsi256_pd(n64));
  return _mm256_andnot_pd(underflow, r);
}

// Complementary error function, Cephes ndtr.c coefficients. exp(-a^2) is
// evaluated as exp(-s) * (1 - e) with a^2 = s + e split exactly by FMA.
inline __m256d erfc_pd(__m256d a) {
  static constexpr double P[] = {2.46196981473530512524E-10, 5.64189564831068821977E-1,
                                 7.46321056442269912687E0,   4.86371970985681366614E1,
                                 1.96520832956077098242E2,   5.26445194995477358631E2,
                                 9.34528527171957607540E2,   1.02755188689515710272E3,
                                 5.57535335369399327526E2};
  static constexpr double Q[] = {1.32281951154744992508E1, 8.67072140885989742329E1,
                                 3.54937778887819891062E2, 9.75708501743205489753E2,
                                 1.82390916687909736289E3, 2.24633760818710981792E3,
                                 1.65666309194161350182E3, 5.57535340817727675546E2};
  static constexpr double R[] = {5.64189583547755073984E-1, 1.27536670759978104416E0,
                                 5.01905042251180477414E0,  6.16021097993053585195E0,
                                 7.40974269950448939160E0,  2.97886665372100240670E0};
  static constexpr double S[] = {2.26052863220117276590E0, 9.39603524938001434673E0,
                                 1.20489539808096656605E1, 1.70814450747565897222E1,
                                 9.60896809063285878198E0, 3.36907645100081516050E0};
  static constexpr double T[] = {9.60497373987051638749E0, 9.00260197203842689217E1,
                                 2.23200534594684319226E3, 7.00332514112805075473E3,
                                 5.55923013010394962768E4};
  static constexpr double U[] = {3.35617141647503099647E1, 5.21357949780152679795E2,
                                 4.59432382970980127987E3, 2.26290000613890934246E4,
                                 4.92673942608635921086E4};

  const __m256d sign_mask = set1(-0.0);
  const __m256d x = _mm256_andnot_pd(sign_mask, a);
  const __m256d negative = _mm256_cmp_pd(a, _mm256_setzero_pd(), _CMP_LT_OQ);
  const __m256d small = _mm256_cmp_pd(x, set1(1.0), _CMP_LT_OQ);

  // |a| < 1: 1 - erf(a)
  const __m256d z = _mm256_mul_pd(a, a);
  const __m256d erf_small = _mm256_div_pd(_mm256_mul_pd(a, polevl(z, T)), p1evl(z, U));
  const __m256d near = _mm256_sub_pd(set1(1.0), erf_small);

  // |a| >= 1
  const __m256d s = z;
  const __m256d e = _mm256_fmsub_pd(a, a, s);
  const __m256d ez = _mm256_mul_pd(exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), s)),
                                   _mm256_sub_pd(set1(1.0), e));
  const __m256d mid = _mm256_div_pd(polevl(x, P), p1evl(x, Q));
  const __m256d tail = _mm256_div_pd(polevl(x, R), p1evl(x, S));
  const __m256d use_mid = _mm256_cmp_pd(x, set1(8.0), _CMP_LT_OQ);
  __m256d far = _mm256_mul_pd(ez, _mm256_blendv_pd(tail, mid, use_mid));
  far = _mm256_blendv_pd(far, _mm256_sub_pd(set1(2.0), far), negative);

  return _mm256_blendv_pd(far, near, small);
}

inline __m256d normal_cdf_pd(__m256d x) {
  return _mm256_mul_pd(set1(0.5), erfc_pd(_mm256_mul_pd(x, set1(-0.70710678118654752440))));
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  return std::max(_mm_cvtsd_f64(lo), _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo)));
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(lo) + _mm_cvtsd_f64(_mm_unpackhi_pd(lo, lo));
}

struct QuadraticPd {
  __m256d c0, b0, b1, ha00, a01, ha11;

  explicit QuadraticPd(const QuadraticForm& q)
      : c0(set1(q.c0)), b0(set1(q.b0)), b1(set1(q.b1)), ha00(set1(0.5 * q.a00)), a01(set1(q.a01)),
        ha11(set1(0.5 * q.a11)) {}

  __m256d operator()(__m256d u0, __m256d u1) const {
    __m256d lin = _mm256_fmadd_pd(b1, u1, _mm256_fmadd_pd(b0, u0, c0));
    __m256d quad = _mm256_mul_pd(ha00, _mm256_mul_pd(u0, u0));
    quad = _mm256_fmadd_pd(_mm256_mul_pd(a01, u0), u1, quad);
    quad = _mm256_fmadd_pd(_mm256_mul_pd(ha11, u1), u1, quad);
    return _mm256_sub_pd(lin, quad);
  }
};

inline double quadratic_scalar(const QuadraticForm& q, double u0, double u1) {
  return q.c0 + q.b0 * u0 + q.b1 * u1 - 0.5 * (q.a00 * u0 * u0 + 2.0 * q.a01 * u0 * u1 + q.a11 * u1 * u1);
}

void normal_cdf_avx2(const double* x, double* out, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) _mm256_storeu_pd(out + k, normal_cdf_pd(_mm256_loadu_pd(x + k)));
  if (k < n) {
    alignas(32) double in[4] = {0, 0, 0, 0};
    alignas(32) double res[4];
    for (std::size_t j = k; j < n; ++j) in[j - k] = x[j];
    _mm256_store_pd(res, normal_cdf_pd(_mm256_load_pd(in)));
    for (std::size_t j = k; j < n; ++j) out[j] = res[j - k];
  }
}

void exp_avx2(const double* x, double* out, std::size_t n) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) _mm256_storeu_pd(out + k, exp_pd(_mm256_loadu_pd(x + k)));
  for (; k < n; ++k) {
    alignas(32) double res[4];
    _mm256_store_pd(res, exp_pd(set1(x[k])));
    out[k] = res[0];
  }
}

double log_integral_avx2(const NodeView& nodes, const QuadraticForm& q, const FactorView& f) {
  const QuadraticPd quad(q);
  const std::size_t n4 = nodes.n & ~std::size_t{3};

  __m256d vmax = set1(-std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < n4; k += 4) {
    vmax = _mm256_max_pd(vmax, quad(_mm256_loadu_pd(nodes.u0 + k), _mm256_loadu_pd(nodes.u1 + k)));
  }
  double qmax = hmax(vmax);
  for (std::size_t k = n4; k < nodes.n; ++k) qmax = std::max(qmax, quadratic_scalar(q, nodes.u0[k], nodes.u1[k]));

  const __m256d vqmax = set1(qmax);
  __m256d acc = _mm256_setzero_pd();
  for (std::size_t k = 0; k < n4; k += 4) {
    const __m256d u0 = _mm256_loadu_pd(nodes.u0 + k);
    const __m256d u1 = _mm256_loadu_pd(nodes.u1 + k);
    __m256d v = _mm256_mul_pd(_mm256_loadu_pd(nodes.w + k), exp_pd(_mm256_sub_pd(quad(u0, u1), vqmax)));
    for (std::size_t j = 0; j < f.n; ++j) {
      const __m256d eta = _mm256_fmadd_pd(set1(f.slope1[j]), u1, _mm256_fmadd_pd(set1(f.slope0[j]), u0, set1(f.offset[j])));
      v = _mm256_mul_pd(v, normal_cdf_pd(eta));
    }
    acc = _mm256_add_pd(acc, v);
  }
  double sum = hsum(acc);
  for (std::size_t k = n4; k < nodes.n; ++k) {
    const double u0 = nodes.u0[k];
    const double u1 = nodes.u1[k];
    double v = nodes.w[k] * std::exp(quadratic_scalar(q, u0, u1) - qmax);
    for (std::size_t j = 0; j < f.n; ++j) {
      v *= 0.5 * std::erfc(-(f.offset[j] + f.slope0[j] * u0 + f.slope1[j] * u1) * 0.70710678118654752440);
    }
    sum += v;
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) return std::numeric_limits<double>::quiet_NaN();
  return qmax + std::log(sum);
}

}  // namespace

const Table& avx2_table() {
  static const Table table{normal_cdf_avx2, exp_avx2, log_integral_avx2};
  return table;
}

}  // namespace jmcal::kernels::detail
