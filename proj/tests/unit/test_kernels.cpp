#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "jmcal/kernels.hpp"
#include "jmcal/normal.hpp"

using namespace jmcal::kernels;

namespace {

struct Case {
  std::vector<double> u0, u1, w, off, s0, s1;
  QuadraticForm q{};
};

Case random_case(std::mt19937_64& rng, std::size_t nodes, std::size_t factors) {
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> U(0.1, 1.0);
  Case c;
  for (std::size_t k = 0; k < nodes; ++k) {
    c.u0.push_back(2 * N(rng));
    c.u1.push_back(2 * N(rng));
    c.w.push_back(U(rng) / static_cast<double>(nodes));
  }
  for (std::size_t f = 0; f < factors; ++f) {
    c.off.push_back(N(rng) - 1.5);
    c.s0.push_back(0.5 * N(rng));
    c.s1.push_back(0.5 * N(rng));
  }
  c.q = {N(rng), N(rng), N(rng), 0.5 + U(rng), 0.1 * N(rng), 0.5 + U(rng)};
  return c;
}

// Direct evaluation with the standard library.
double reference(const Case& c) {
  double sum = 0.0;
  for (std::size_t k = 0; k < c.w.size(); ++k) {
    const double a = c.u0[k], b = c.u1[k];
    double v = c.q.c0 + c.q.b0 * a + c.q.b1 * b - 0.5 * (c.q.a00 * a * a + 2 * c.q.a01 * a * b + c.q.a11 * b * b);
    double term = c.w[k] * std::exp(v);
    for (std::size_t f = 0; f < c.off.size(); ++f) {
      term *= 0.5 * std::erfc(-(c.off[f] + c.s0[f] * a + c.s1[f] * b) / std::sqrt(2.0));
    }
    sum += term;
  }
  return std::log(sum);
}

std::vector<Isa> isas() {
  std::vector<Isa> out{Isa::Scalar};
  if (isa_available(Isa::Avx2)) out.push_back(Isa::Avx2);
  return out;
}

}  // namespace

TEST_CASE("log_integral matches a direct evaluation for every ISA") {
  std::mt19937_64 rng(11);
  for (std::size_t nodes : {1u, 3u, 4u, 7u, 64u, 1601u}) {
    for (std::size_t factors : {0u, 1u, 5u}) {
      const Case c = random_case(rng, nodes, factors);
      const NodeView nv{c.u0.data(), c.u1.data(), c.w.data(), nodes};
      const FactorView fv{c.off.data(), c.s0.data(), c.s1.data(), factors};
      const double ref = reference(c);
      for (Isa isa : isas()) {
        CAPTURE(isa_name(isa));
        CHECK(log_integral(isa, nv, c.q, fv) == doctest::Approx(ref).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("scalar and AVX2 log_integral agree") {
  if (!isa_available(Isa::Avx2)) return;
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 200; ++rep) {
    const Case c = random_case(rng, 1 + rng() % 300, rng() % 6);
    const NodeView nv{c.u0.data(), c.u1.data(), c.w.data(), c.w.size()};
    const FactorView fv{c.off.data(), c.s0.data(), c.s1.data(), c.off.size()};
    const double a = log_integral(Isa::Scalar, nv, c.q, fv);
    const double b = log_integral(Isa::Avx2, nv, c.q, fv);
    CHECK(std::abs(a - b) <= 1e-13 * std::max(1.0, std::abs(a)));
  }
}

TEST_CASE("log-space fallback handles extreme scales") {
  std::mt19937_64 rng(13);
  Case c = random_case(rng, 50, 3);
  const NodeView nv{c.u0.data(), c.u1.data(), c.w.data(), 50};
  const FactorView fv{c.off.data(), c.s0.data(), c.s1.data(), 3};
  const double base = reference(c);
  for (double shift : {-900.0, 900.0}) {
    QuadraticForm q = c.q;
    q.c0 += shift;
    for (Isa isa : isas()) {
      CAPTURE(isa_name(isa));
      CHECK(log_integral(isa, nv, q, fv) == doctest::Approx(base + shift).epsilon(1e-12));
    }
  }
  // Factors deep in the lower tail underflow Phi itself.
  std::vector<double> off(3, -45.0);
  const FactorView tail{off.data(), c.s0.data(), c.s1.data(), 3};
  std::vector<double> terms;
  for (std::size_t k = 0; k < 50; ++k) {
    const double a = c.u0[k], b = c.u1[k];
    double v = std::log(c.w[k]) + c.q.c0 + c.q.b0 * a + c.q.b1 * b -
               0.5 * (c.q.a00 * a * a + 2 * c.q.a01 * a * b + c.q.a11 * b * b);
    for (std::size_t f = 0; f < 3; ++f) v += jmcal::normal::log_cdf(off[f] + c.s0[f] * a + c.s1[f] * b);
    terms.push_back(v);
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - top);
  const double ref = top + std::log(sum);
  for (Isa isa : isas()) {
    CAPTURE(isa_name(isa));
    CHECK(log_integral(isa, nv, c.q, tail) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("vector normal_cdf and exp") {
  std::vector<double> x;
  for (double v = -38; v < 9; v += 0.013) x.push_back(v);
  std::vector<double> out(x.size()), ex(x.size());
  for (Isa isa : isas()) {
    CAPTURE(isa_name(isa));
    normal_cdf(isa, x, out);
    exp(isa, x, ex);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double ref = 0.5 * std::erfc(-x[k] / std::sqrt(2.0));
      CHECK(out[k] == doctest::Approx(ref).epsilon(1e-13));
      CHECK(ex[k] == doctest::Approx(std::exp(x[k])).epsilon(1e-14));
    }
  }
}

TEST_CASE("ISA override") {
  force_isa(Isa::Scalar);
  CHECK(active_isa() == Isa::Scalar);
  force_isa(std::nullopt);
  if (isa_available(Isa::Avx2)) CHECK(active_isa() == Isa::Avx2);
}
