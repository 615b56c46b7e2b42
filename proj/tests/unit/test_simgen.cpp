#include <doctest.h>

#include <cmath>

#include "jmcal/normal.hpp"
#include "jmcal/simgen.hpp"
#include "support.hpp"

using namespace jmcal;

TEST_CASE("reference truth") {
  const auto t = table1_truth();
  CHECK(t.grid.times == std::vector<double>{0, 1, 2, 3, 4});
  CHECK(t.P() == 3);
  CHECK(t.longitudinal.sigma_eps2(0) == doctest::Approx(0.5625));
  CHECK(t.survival.alpha0.size() == 4);
  CHECK(t.survival.alpha0(0) == -1.75);
  CHECK(t.survival.alpha(1) == 0.0);
  CHECK(table1_truth(true).longitudinal.sigma_eps2(2) == doctest::Approx(0.75));
  CHECK(table1_truth(false, true).grid.times == std::vector<double>{1, 2, 3, 4, 5});
  CHECK(single_marker_truth().P() == 1);
}

TEST_CASE("truth JSON round trip") {
  const auto t = table1_truth();
  const auto back = nlohmann::json(t).get<TruthParams>();
  CHECK(back.longitudinal.beta == t.longitudinal.beta);
  CHECK(back.survival.alpha == t.survival.alpha);
  CHECK(back.grid.times == t.grid.times);
  CHECK(back.marker_names == t.marker_names);
}

TEST_CASE("without association the first-interval event rate is Phi(alpha0)") {
  auto t = table1_truth();
  t.survival.alpha.setZero();
  const int I = 40000;
  const auto g = generate_panel(t, I, 51);
  int events = 0;
  for (const auto& s : g.panel.subjects) events += s.event && s.visits == 1;
  const double p = normal::cdf(-1.75);
  CHECK(p == doctest::Approx(0.0401).epsilon(1e-3));
  const double rate = static_cast<double>(events) / I;
  CHECK(std::abs(rate - p) < 3 * std::sqrt(p * (1 - p) / I));
}

TEST_CASE("zero residual variance makes the observed markers exact") {
  auto t = table1_truth();
  t.longitudinal.sigma_eps2.setZero();
  const auto g = generate_panel(t, 50, 52);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& s = g.panel.subjects[i];
    CHECK(s.markers == g.x_true[i].leftCols(s.visits));
  }
}

TEST_CASE("generated panels are valid and reproducible") {
  const auto a = generate_panel(table1_truth(), 200, 53, 0);
  const auto b = generate_panel(table1_truth(), 200, 53, 0);
  const auto c = generate_panel(table1_truth(), 200, 53, 1);
  CHECK(validate_panel(a.panel).empty());
  CHECK(a.panel == b.panel);
  CHECK_FALSE(a.panel == c.panel);
  // The first subject's draws do not depend on how many follow.
  const auto small = generate_panel(table1_truth(), 1, 53, 0);
  CHECK(small.panel.subjects[0] == a.panel.subjects[0]);
}

TEST_CASE("random effects have the truth covariance") {
  const auto t = table1_truth();
  const auto g = generate_panel(t, 20000, 54);
  MatrixXd S = MatrixXd::Zero(6, 6);
  for (const auto& v : g.gamma) S += v * v.transpose();
  S /= 20000.0;
  for (int k = 0; k < 6; ++k) {
    CHECK(S(k, k) == doctest::Approx(t.longitudinal.sigma_gamma(k, k)).epsilon(0.05));
  }
}

TEST_CASE("naive fit on the true trajectories recovers the association") {
  const auto t = table1_truth();
  const auto g = generate_panel(t, 5000, 55);
  const auto fit = fit_naive(g.panel, g.x_true, TieMap::tied(4));
  CHECK(fit.params.alpha(0) == doctest::Approx(0.4).epsilon(0.1));
  CHECK(std::abs(fit.params.alpha(1)) < 0.05);
  CHECK(fit.params.alpha0(0) == doctest::Approx(-1.75).epsilon(0.05));
}

TEST_CASE("study summaries") {
  StudyOptions opts;
  opts.I = 150;
  opts.replicates = 3;
  opts.calibration.M = 2;
  opts.seed = 56;
  const auto rep = run_study(table1_truth(), opts);
  REQUIRE(rep.estimators.size() == 3);
  for (const auto& s : rep.estimators) {
    CAPTURE(estimator_name(s.estimator));
    CHECK(s.failures == 0);
    CHECK(s.estimates.rows() == 3);
    const int a1 = s.index_of("alpha1");
    REQUIRE(a1 >= 0);
    const auto col = s.estimates.col(a1);
    const double mean = col.mean();
    CHECK(s.mean(a1) == doctest::Approx(mean).epsilon(1e-12));
    const double sd = std::sqrt((col.array() - mean).square().sum() / 2.0);
    CHECK(s.sd(a1) == doctest::Approx(sd).epsilon(1e-12));
    const double rmse = std::sqrt((col.array() - 0.4).square().mean());
    CHECK(s.rmse(a1) == doctest::Approx(rmse).epsilon(1e-12));
  }
  CHECK(rep.get(Estimator::Proposed).index_of("beta10") >= 0);
  CHECK_THROWS(rep.get(Estimator::Observed).index_of("beta10"));
  const nlohmann::json j = rep;
  CHECK(j.contains("proposed"));
}

TEST_CASE("study results do not depend on the thread count") {
  StudyOptions a;
  a.I = 120;
  a.replicates = 2;
  a.calibration.M = 2;
  a.estimators = {Estimator::Proposed};
  StudyOptions b = a;
  b.threads = 2;
  const auto ra = run_study(table1_truth(), a);
  const auto rb = run_study(table1_truth(), b);
  CHECK(ra.estimators[0].estimates == rb.estimators[0].estimates);
}
