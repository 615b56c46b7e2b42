// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Every check is seeded and uses the default pipeline settings.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jmcal/bootstrap.hpp"
#include "jmcal/calibration.hpp"
#include "jmcal/cli.hpp"
#include "jmcal/lmm.hpp"
#include "jmcal/optim.hpp"
#include "jmcal/pairwise.hpp"
#include "jmcal/quadrature.hpp"
#include "jmcal/simgen.hpp"
#include "jmcal/survival.hpp"
#include "pbc_like.hpp"

using namespace jmcal;

namespace {

constexpr std::uint64_t kSeed = 1;
int failures = 0;

void report(const std::string& id, bool ok, const std::string& detail) {
  std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double Phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// ---- Reference simulation study --------------------------------------------

void simulation_criteria() {
  StudyOptions so;
  so.I = 300;
  so.replicates = 100;
  so.seed = kSeed;
  so.calibration.M = 10;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = run_study(table1_truth(), so);
  const double elapsed = seconds_since(t0);

  const auto& prop = rep.get(Estimator::Proposed);
  const auto& obs = rep.get(Estimator::Observed);
  const auto& tru = rep.get(Estimator::Truth);
  const int a1 = prop.index_of("alpha1"), a2 = prop.index_of("alpha2"), a3 = prop.index_of("alpha3");
  const int b10 = prop.index_of("beta10");

  const double m1 = prop.mean(a1), m2 = prop.mean(a2), m3 = prop.mean(a3), mb = prop.mean(b10);
  const bool c1 = std::abs(m1 - 0.405) <= 0.03 && std::abs(m2) <= 0.025 && std::abs(m3 - 0.400) <= 0.03 &&
                  std::abs(mb - 1.0) <= 0.02 && prop.failures == 0;
  report("C1 proposed estimator means", c1,
         fmt("alpha1=%.4f alpha2=%.4f alpha3=%.4f beta10=%.4f", m1, m2, m3, mb) +
             fmt(" (failures %.0f, %.0f s)", prop.failures, elapsed));

  const double ob = obs.mean(obs.index_of("alpha1"));
  const double rmse_obs = obs.rmse(obs.index_of("alpha1")), rmse_prop = prop.rmse(a1);
  report("C2 observed estimator attenuation", ob >= 0.19 && ob <= 0.25 && rmse_prop < rmse_obs,
         fmt("observed alpha1=%.4f, RMSE proposed=%.4f < observed=%.4f", ob, rmse_prop, rmse_obs));

  const double tm = tru.mean(tru.index_of("alpha1"));
  report("C3 truth estimator", std::abs(tm - 0.408) <= 0.03, fmt("truth alpha1=%.4f", tm));
}

// ---- Pipeline against the exact joint likelihood ---------------------------

void quadrature_criterion() {
  const auto truth = single_marker_truth();
  const TieMap tie = TieMap::tied(truth.J() - 1);
  const int R = 50;
  std::vector<double> diff;
  double pipe_mean = 0, mle_mean = 0;
  int mle_failures = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < R; ++r) {
    const auto g = generate_panel(truth, 300, kSeed + 100, static_cast<std::uint64_t>(r));
    CalibrationOptions co;
    co.tie = tie;
    co.seed = kSeed;
    const auto pipe = run_calibration(g.panel, co);
    JointMleOptions jo;
    jo.tie = tie;
    const auto mle = joint_mle_p1(g.panel, {truth.longitudinal, truth.survival}, jo);
    if (!mle.converged) ++mle_failures;
    diff.push_back(pipe.survival.alpha(0) - mle.params.survival.alpha(0));
    pipe_mean += pipe.survival.alpha(0) / R;
    mle_mean += mle.params.survival.alpha(0) / R;
  }
  double mean = 0, ss = 0;
  for (double d : diff) mean += d;
  mean /= R;
  for (double d : diff) ss += (d - mean) * (d - mean);
  const double se = std::sqrt(ss / (R - 1) / R);
  report("C4a pipeline vs quadrature MLE", std::abs(mean) <= 3 * se && mle_failures == 0,
         fmt("mean alpha pipeline %.4f, MLE %.4f; ", pipe_mean, mle_mean) +
             fmt("difference %.4f, 3 MC SE %.4f, MLE non-converged %.0f (%.0f s)", mean, 3 * se, mle_failures,
                 seconds_since(t0)));

  const auto g = generate_panel(truth, 300, kSeed + 200);
  const JointParamsP1 par{truth.longitudinal, truth.survival};
  QuadSpec q40, q80;
  q40.nodes = 40;
  q80.nodes = 80;
  const double l40 = joint_loglik_p1(par, g.panel, q40), l80 = joint_loglik_p1(par, g.panel, q80);
  report("C4b node doubling", std::abs(l40 - l80) < 1e-6,
         fmt("loglik 40 nodes %.8f, 80 nodes %.8f, |diff| %.2e", l40, l80, std::abs(l40 - l80)));
}

// ---- Property suite --------------------------------------------------------

MatrixXd spd(std::mt19937_64& rng, int n, double ridge) {
  std::normal_distribution<double> N;
  MatrixXd A(n, n);
  for (Eigen::Index k = 0; k < A.size(); ++k) A.data()[k] = N(rng);
  return A * A.transpose() / n + ridge * MatrixXd::Identity(n, n);
}

bool lmm_gradient_ok(std::mt19937_64& rng, double& worst) {
  std::normal_distribution<double> N;
  LmmProblem pr;
  pr.n_fixed = 2;
  pr.n_random = 2;
  pr.n_residual = 1;
  pr.random_group = {0, 0};
  for (int i = 0; i < 40; ++i) {
    const int n = 2 + static_cast<int>(rng() % 4);
    LmmBlock b;
    b.y.resize(n);
    b.fixed.resize(n, 2);
    for (int k = 0; k < n; ++k) {
      b.fixed.row(k) << 1.0, k;
      b.y(k) = 1.0 + 0.3 * k + 0.7 * N(rng);
    }
    b.random = b.fixed;
    b.residual.assign(static_cast<std::size_t>(n), 0);
    pr.blocks.push_back(std::move(b));
  }
  LmmEstimate e;
  e.beta = Eigen::Vector2d(0.8, 0.2);
  e.sigma = spd(rng, 2, 0.05);
  e.resid = VectorXd::Constant(1, 0.4);
  const LmmObjective obj(pr, e, false, false);
  const VectorXd theta = obj.pack(e);
  VectorXd g;
  obj(theta, &g);
  const VectorXd fd = numeric_gradient([&](const VectorXd& x) { return obj(x, nullptr); }, theta, 1e-6);
  bool ok = true;
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    const double rel = std::abs(g(k) - fd(k)) / std::max(1.0, std::abs(fd(k)));
    worst = std::max(worst, rel);
    ok = ok && rel <= 1e-5;
  }
  return ok;
}

bool probit_gradient_ok(std::mt19937_64& rng, HazardMode mode, double& worst) {
  std::normal_distribution<double> N;
  LongitudinalPanel panel;
  panel.grid.times = {0, 1, 2, 3};
  panel.marker_names = {"a", "b"};
  panel.covariate_names = {"z"};
  std::vector<MatrixXd> traj, cov;
  for (int i = 0; i < 80; ++i) {
    SubjectRecord s;
    s.id = std::to_string(i);
    s.visits = 1 + static_cast<int>(rng() % 4);
    s.event = s.visits < 4;
    s.markers = MatrixXd::Zero(2, s.visits);
    s.covariates = VectorXd::Constant(1, N(rng));
    panel.subjects.push_back(s);
    MatrixXd x(2, 4);
    for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = N(rng);
    traj.push_back(x);
    cov.push_back(spd(rng, 4, 0.01) * 0.1);
  }
  const auto d = build_hazard_data(panel, traj, &cov);
  const TieMap tie = TieMap::distinct(3);
  VectorXd theta(tie.groups() + 3);
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta(k) = 0.5 * N(rng);
  VectorXd g;
  survival_loglik_packed(theta, d, tie, mode, nullptr, &g);
  const VectorXd fd = numeric_gradient(
      [&](const VectorXd& t) { return survival_loglik_packed(t, d, tie, mode, nullptr, nullptr); }, theta, 1e-6);
  bool ok = true;
  for (Eigen::Index k = 0; k < g.size(); ++k) {
    const double rel = std::abs(g(k) - fd(k)) / std::max(1.0, std::abs(fd(k)));
    worst = std::max(worst, rel);
    ok = ok && rel <= 1e-5;
  }
  return ok;
}

// Var(gamma_hat - gamma) on random panels and parameters: PSD and below the prior.
bool calibration_psd_ok(std::mt19937_64& rng, double& worst) {
  std::normal_distribution<double> N;
  bool ok = true;
  for (int c = 0; c < 100; ++c) {
    const int P = 1 + c % 3, q = c % 2, J = 5;
    LongitudinalPanel panel;
    panel.grid.times = {0, 1, 2, 3, 4};
    for (int p = 0; p < P; ++p) panel.marker_names.push_back("m" + std::to_string(p));
    for (int k = 0; k < q; ++k) panel.covariate_names.push_back("z" + std::to_string(k));
    for (int i = 0; i < 5 + c % 7; ++i) {
      SubjectRecord s;
      s.id = std::to_string(i);
      s.visits = 1 + static_cast<int>(rng() % J);
      s.event = s.visits < J;
      s.markers.resize(P, s.visits);
      for (Eigen::Index k = 0; k < s.markers.size(); ++k) s.markers.data()[k] = N(rng);
      if (s.visits > 1 && rng() % 3 == 0) s.markers(static_cast<int>(rng() % P), 1) = NAN;
      s.covariates.resize(q);
      for (int k = 0; k < q; ++k) s.covariates(k) = N(rng);
      panel.subjects.push_back(s);
    }
    MvLmmParams par;
    par.beta = VectorXd::Zero(2 * P);
    par.sigma_gamma = spd(rng, 2 * P, 0.02);
    par.sigma_eps2 = VectorXd::Constant(P, 0.1 + std::abs(N(rng)));
    par.eta = MatrixXd::Zero(P, q);
    for (const auto& C : calibration_covariance(panel, par)) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(C);
      const double lo = es.eigenvalues().minCoeff() / std::max(1.0, C.norm());
      worst = std::min(worst, lo);
      ok = ok && lo >= -1e-10;
    }
  }
  return ok;
}

// Phi(L / sqrt(1 + v)) = E[Phi(L + U)], U ~ N(0, v), by Monte Carlo.
bool attenuation_ok(std::mt19937_64& rng, double& worst_z) {
  SurvivalParams p{VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 0.5), VectorXd()};
  bool ok = true;
  for (double v : {0.1, 0.5, 2.0}) {
    for (double x : {-1.0, 0.5, 2.0}) {
      const int n = 200000;
      std::normal_distribution<double> U(0.0, std::sqrt(v));
      double s = 0, s2 = 0;
      for (int k = 0; k < n; ++k) {
        const double h = Phi(-1.0 + 0.5 * x + U(rng));
        s += h;
        s2 += h * h;
      }
      const double mean = s / n, se = std::sqrt((s2 / n - mean * mean) / n);
      const double z = std::abs(hazard(p, 0, VectorXd::Constant(1, x), VectorXd(), v) - mean) / se;
      worst_z = std::max(worst_z, z);
      ok = ok && z <= 3;
    }
  }
  return ok;
}

bool bivariate_identity_ok() {
  const auto gen = generate_panel(table1_truth(), 150, kSeed + 300);
  LongitudinalPanel panel = gen.panel;
  panel.marker_names.resize(2);
  for (auto& s : panel.subjects) s.markers = s.markers.topRows(2).eval();
  LmmProblem pr;
  pr.n_fixed = 4;
  pr.n_random = 4;
  pr.n_residual = 2;
  pr.random_group = {0, 0, 1, 1};
  for (const auto& s : panel.subjects) {
    const int n = 2 * s.visits;
    LmmBlock b;
    b.y.resize(n);
    b.fixed = MatrixXd::Zero(n, 4);
    int row = 0;
    for (int p = 0; p < 2; ++p) {
      for (int j = 0; j < s.visits; ++j) {
        b.y(row) = s.markers(p, j);
        b.fixed(row, 2 * p) = 1;
        b.fixed(row, 2 * p + 1) = panel.grid[j];
        b.residual.push_back(p);
        ++row;
      }
    }
    b.random = b.fixed;
    pr.blocks.push_back(std::move(b));
  }
  const auto direct = fit_lmm(pr, std::nullopt);
  const auto pw = fit_pairwise_marginal(panel);
  return pw.beta == direct.estimate.beta && pw.sigma_gamma == direct.estimate.sigma &&
         pw.sigma_eps2 == direct.estimate.resid;
}

bool thread_determinism_ok() {
  const auto g = generate_panel(table1_truth(), 300, kSeed + 400);
  CalibrationOptions a;
  a.tie = TieMap::tied(4);
  a.seed = kSeed;
  a.threads = 1;
  CalibrationOptions b = a;
  b.threads = 4;
  const auto ra = run_calibration(g.panel, a), rb = run_calibration(g.panel, b), rc = run_calibration(g.panel, a);
  return ra.survival.alpha == rb.survival.alpha && ra.survival.alpha0 == rb.survival.alpha0 &&
         ra.longitudinal.sigma_gamma == rb.longitudinal.sigma_gamma && ra.survival.alpha == rc.survival.alpha;
}

void property_criterion() {
  std::mt19937_64 rng(kSeed);
  const auto t0 = std::chrono::steady_clock::now();
  double g_lmm = 0, g_naive = 0, g_corr = 0, psd_min = INFINITY, att_z = 0;
  const bool lmm = lmm_gradient_ok(rng, g_lmm);
  const bool naive = probit_gradient_ok(rng, HazardMode::Naive, g_naive);
  const bool corr = probit_gradient_ok(rng, HazardMode::Corrected, g_corr);
  const bool psd = calibration_psd_ok(rng, psd_min);
  const bool att = attenuation_ok(rng, att_z);
  const bool biv = bivariate_identity_ok();
  const bool det = thread_determinism_ok();
  const double elapsed = seconds_since(t0);
  std::ostringstream s;
  s << "FD rel err lmm " << g_lmm << " naive " << g_naive << " corrected " << g_corr << "; min eig " << psd_min
    << "; attenuation max |z| " << att_z << "; bivariate identical " << biv << "; thread deterministic " << det
    << "; " << elapsed << " s";
  report("C5 property suite", lmm && naive && corr && psd && att && biv && det && elapsed < 120, s.str());
}

// ---- Bootstrap -------------------------------------------------------------

void bootstrap_criterion() {
  const auto g = generate_panel(table1_truth(), 300, kSeed + 500);
  CalibrationOptions co;
  co.tie = TieMap::tied(4);
  co.seed = kSeed;
  BootstrapOptions bo;
  bo.B = 200;
  bo.seed = kSeed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = bootstrap_ci(g.panel, co, bo);
  const auto b = bootstrap_ci(g.panel, co, bo);
  const auto& p = a.get("alpha_x1");
  const auto& ci = p.intervals.at(0);
  const bool same = a.draws == b.draws;
  const bool covers = ci.lower <= 0.4 && 0.4 <= ci.upper;
  report("C6 bootstrap", covers && same && a.failures == 0,
         fmt("alpha1 95%% CI [%.4f, %.4f], estimate %.4f, failures %.0f", ci.lower, ci.upper, p.estimate, a.failures) +
             (same ? ", repeat identical" : ", repeat differs") + fmt(" (%.0f s)", seconds_since(t0)));
}

// ---- Liver-cohort-like smoke run through the command-line tool -------------

void pbc_smoke() {
  const auto dir = std::filesystem::path(JMCAL_TEST_DATA_DIR) / "acceptance";
  std::filesystem::create_directories(dir);
  const auto lp = (dir / "pbc_long.csv").string(), ep = (dir / "pbc_events.csv").string();
  test::write_pbc_like(lp, ep, 312, kSeed);
  std::ostringstream out, err;
  const int code = run_cli({"fit", "--long", lp, "--events", ep, "--grid", "0,0.5,1,2,3,4", "--log-markers",
                            "--covariates", "age", "--markers", "bilirubin,albumin,prothrombin", "--tie-alpha0", "all"},
                           out, err);
  bool ok = code == 0;
  double ab = NAN, aa = NAN, ap = NAN;
  if (ok) {
    const auto doc = nlohmann::json::parse(out.str());
    const auto& e = doc.at("estimates");
    ab = e.at("alpha_bilirubin").get<double>();
    aa = e.at("alpha_albumin").get<double>();
    ap = e.at("alpha_prothrombin").get<double>();
    ok = ab > 0 && aa < 0 && ap > 0;
  }
  report("PBC smoke signs", ok,
         fmt("exit %.0f, alpha bilirubin %.3f, albumin %.3f, prothrombin %.3f", code, ab, aa, ap));
}

}  // namespace

int main() {
  property_criterion();
  quadrature_criterion();
  bootstrap_criterion();
  pbc_smoke();
  simulation_criteria();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
