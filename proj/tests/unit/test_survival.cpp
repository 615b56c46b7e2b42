#include <doctest.h>

#include <cmath>
#include <random>

#include "jmcal/survival.hpp"
#include "support.hpp"

using namespace jmcal;

namespace {

double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Random hazard data with calibration variances and one covariate.
HazardData hazard_fixture(std::mt19937_64& rng, int I, int J, int P) {
  std::normal_distribution<double> N;
  std::vector<double> grid;
  for (int j = 0; j < J; ++j) grid.push_back(j);
  auto panel = test::empty_panel(grid, P, 1);
  std::vector<MatrixXd> traj, cov;
  for (int i = 0; i < I; ++i) {
    const int visits = 1 + static_cast<int>(rng() % static_cast<unsigned>(J));
    panel.subjects.push_back(test::subject(std::to_string(i), visits, visits < J, MatrixXd::Zero(P, visits),
                                           VectorXd::Constant(1, N(rng))));
    MatrixXd x(P, J);
    for (int k = 0; k < x.size(); ++k) x.data()[k] = N(rng);
    traj.push_back(x);
    cov.push_back(test::random_spd(2 * P, rng, 0.01) * 0.1);
  }
  return build_hazard_data(panel, traj, &cov);
}

VectorXd random_theta(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> N;
  VectorXd t(n);
  for (int k = 0; k < n; ++k) t(k) = 0.5 * N(rng);
  return t;
}

}  // namespace

TEST_CASE("hazard rows are lagged and carried forward") {
  auto panel = test::empty_panel({0, 1, 2}, 1);
  MatrixXd m(1, 3);
  m << 1.0, NAN, 3.0;
  panel.subjects.push_back(test::subject("a", 3, false, m));
  panel.subjects.push_back(test::subject("b", 2, true, MatrixXd::Constant(1, 2, 5.0)));
  const auto d = build_hazard_data(panel, {m, MatrixXd::Constant(1, 2, 5.0)});
  REQUIRE(d.rows() == 4);
  CHECK(d.interval == std::vector<int>{0, 1, 0, 1});
  CHECK(d.event == std::vector<char>{0, 0, 0, 1});
  CHECK(d.x(0, 0) == 1.0);
  CHECK(d.x(1, 0) == 1.0);  // missing at index 1, carried from index 0
  CHECK(d.x(3, 0) == 5.0);
}

TEST_CASE("two-interval likelihood by hand") {
  auto panel = test::empty_panel({0, 1, 2}, 1);
  std::vector<MatrixXd> traj;
  std::vector<MatrixXd> cov;
  const double xs[3][3] = {{0.3, 0, 0}, {-0.2, 0.9, 0}, {1.1, -0.4, 0}};
  panel.subjects.push_back(test::subject("e1", 1, true, MatrixXd::Zero(1, 1)));
  panel.subjects.push_back(test::subject("e2", 2, true, MatrixXd::Zero(1, 2)));
  panel.subjects.push_back(test::subject("c", 3, false, MatrixXd::Zero(1, 3)));
  for (int i = 0; i < 3; ++i) {
    MatrixXd x(1, 3);
    x << xs[i][0], xs[i][1], xs[i][2];
    traj.push_back(x);
    MatrixXd c(2, 2);
    c << 0.2 + 0.1 * i, 0.03, 0.03, 0.05;
    cov.push_back(c);
  }
  const auto d = build_hazard_data(panel, traj, &cov);
  SurvivalParams p{Eigen::Vector2d(-1.2, -0.8), VectorXd::Constant(1, 0.6), VectorXd()};
  const auto w = [&](int i, double t) { return cov[i](0, 0) + 2 * t * cov[i](0, 1) + t * t * cov[i](1, 1); };
  const double a = 0.6;
  for (HazardMode mode : {HazardMode::Naive, HazardMode::Corrected}) {
    const auto lin = [&](int i, int k) {
      const double s = mode == HazardMode::Naive ? 1.0 : std::sqrt(1 + a * a * w(i, k));
      return (p.alpha0(k) + a * xs[i][k]) / s;
    };
    const double ref = std::log(Phi(lin(0, 0))) + std::log(1 - Phi(lin(1, 0))) + std::log(Phi(lin(1, 1))) +
                       std::log(1 - Phi(lin(2, 0))) + std::log(1 - Phi(lin(2, 1)));
    CHECK(survival_loglik(p, d, TieMap::distinct(2), mode) == doctest::Approx(ref).epsilon(1e-12));
  }
  // Frozen omega only uses omega in the denominator.
  const VectorXd omega = VectorXd::Constant(1, 0.3);
  const auto lin = [&](int i, int k) { return (p.alpha0(k) + a * xs[i][k]) / std::sqrt(1 + 0.09 * w(i, k)); };
  const double ref = std::log(Phi(lin(0, 0))) + std::log(1 - Phi(lin(1, 0))) + std::log(Phi(lin(1, 1))) +
                     std::log(1 - Phi(lin(2, 0))) + std::log(1 - Phi(lin(2, 1)));
  CHECK(survival_loglik(p, d, TieMap::distinct(2), HazardMode::FrozenOmega, &omega) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("survival gradients match finite differences") {
  std::mt19937_64 rng(31);
  const VectorXd omega = Eigen::Vector2d(0.3, -0.2);
  for (HazardMode mode : {HazardMode::Naive, HazardMode::Corrected, HazardMode::FrozenOmega}) {
    for (const TieMap& tie : {TieMap::distinct(3), TieMap{{0, 0, 1}}}) {
      const auto d = hazard_fixture(rng, 80, 4, 2);
      const VectorXd theta = random_theta(rng, tie.groups() + 2 + 1);
      VectorXd g;
      survival_loglik_packed(theta, d, tie, mode, &omega, &g);
      const VectorXd fd = numeric_gradient(
          [&](const VectorXd& t) { return survival_loglik_packed(t, d, tie, mode, &omega, nullptr); }, theta, 1e-6);
      for (Eigen::Index k = 0; k < g.size(); ++k) {
        CHECK(std::abs(g(k) - fd(k)) <= 1e-5 * std::max(1.0, std::abs(fd(k))));
      }
    }
  }
}

TEST_CASE("probit attenuation identity") {
  // Phi(L / sqrt(1 + v)) = E[Phi(L + U)], U ~ N(0, v).
  std::mt19937_64 rng(32);
  SurvivalParams p{VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 0.5), VectorXd()};
  for (double v : {0.1, 0.5, 2.0}) {
    for (double x : {-1.0, 0.5, 2.0}) {
      const int n = 200000;
      std::normal_distribution<double> U(0.0, std::sqrt(v));
      double sum = 0.0, sum2 = 0.0;
      for (int k = 0; k < n; ++k) {
        const double h = Phi(-1.0 + 0.5 * x + U(rng));
        sum += h;
        sum2 += h * h;
      }
      const double mean = sum / n;
      const double se = std::sqrt((sum2 / n - mean * mean) / n);
      const double lhs = hazard(p, 0, VectorXd::Constant(1, x), VectorXd(), v);
      CHECK(std::abs(lhs - mean) <= 3 * se);
    }
  }
}

TEST_CASE("calibration variance") {
  MatrixXd C(4, 4);
  C << 0.4, 0.1, 0.05, 0.0, 0.1, 0.2, 0.0, 0.01, 0.05, 0.0, 0.3, 0.02, 0.0, 0.01, 0.02, 0.1;
  const Eigen::Vector2d om(0.5, -1.0);
  const double t = 2.0;
  Eigen::Vector4d R(0.5, 1.0, -1.0, -2.0);
  CHECK(calibration_variance(C, om, t) == doctest::Approx(R.dot(C * R)));
}

TEST_CASE("naive fit recovers the generating hazard") {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> N;
  std::uniform_real_distribution<double> U;
  const int I = 20000, J = 4;
  auto panel = test::empty_panel({0, 1, 2, 3}, 1, 1);
  std::vector<MatrixXd> traj;
  for (int i = 0; i < I; ++i) {
    MatrixXd x(1, J);
    for (int j = 0; j < J; ++j) x(0, j) = N(rng);
    const double z = N(rng);
    int visits = J;
    bool event = false;
    for (int k = 0; k < J - 1; ++k) {
      if (U(rng) < Phi(-1.0 + 0.5 * x(0, k) - 0.3 * z)) {
        visits = k + 1;
        event = true;
        break;
      }
    }
    panel.subjects.push_back(test::subject(std::to_string(i), visits, event, x.leftCols(visits), VectorXd::Constant(1, z)));
    traj.push_back(x);
  }
  const auto d = build_hazard_data(panel, traj);
  const auto fit = fit_survival(d, TieMap::tied(3));
  CHECK(fit.converged);
  CHECK_FALSE(fit.separation);
  CHECK(fit.params.alpha0(0) == doctest::Approx(-1.0).epsilon(0.04));
  CHECK(fit.params.alpha(0) == doctest::Approx(0.5).epsilon(0.06));
  CHECK(fit.params.zeta(0) == doctest::Approx(-0.3).epsilon(0.08));
}

TEST_CASE("corrected and frozen-omega fits coincide at the fixed point") {
  std::mt19937_64 rng(34);
  auto d = hazard_fixture(rng, 2000, 5, 2);
  // Make events depend on x so alpha is away from zero.
  std::uniform_real_distribution<double> U;
  for (int r = 0; r < d.rows(); ++r) d.event[static_cast<std::size_t>(r)] = U(rng) < Phi(-1.0 + 0.8 * d.x(r, 0)) ? 1 : 0;
  SurvivalFitOptions c, f;
  c.mode = HazardMode::Corrected;
  f.mode = HazardMode::FrozenOmega;
  const auto fc = fit_survival(d, TieMap::tied(4), c);
  const auto ff = fit_survival(d, TieMap::tied(4), f);
  CHECK(fc.converged);
  CHECK(ff.converged);
  // The fixed point solves a different score equation; both should land
  // close to each other when W is small.
  CHECK(std::abs(fc.params.alpha(0) - ff.params.alpha(0)) < 0.05);
}

TEST_CASE("an interval group without events is flagged as separation") {
  std::mt19937_64 rng(35);
  auto d = hazard_fixture(rng, 200, 3, 1);
  for (auto& e : d.event) e = 0;
  const auto fit = fit_survival(d, TieMap::tied(2));
  CHECK(fit.separation);
}
