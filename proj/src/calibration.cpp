#include "jmcal/calibration.hpp"

#include <cmath>
#include <map>
#include <random>

#include "jmcal/error.hpp"
#include "jmcal/lmm.hpp"
#include "jmcal/parallel.hpp"
#include "jmcal/rng.hpp"

namespace jmcal {

namespace {

MatrixXd psd_sqrt(const MatrixXd& m) {
  if (m.size() == 0) return m;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

}  // namespace

LongitudinalPanel simulate_pseudo_complete(const ConditionalMvLmmParams& cond, const LongitudinalPanel& panel,
                                           std::uint64_t seed, std::uint64_t replicate) {
  const int P = panel.P();
  const int J = panel.J();
  const int q = panel.q();
  std::map<int, MatrixXd> roots;
  for (const auto& [stratum, sp] : cond.strata) roots.emplace(stratum, psd_sqrt(sp.sigma_gamma_star));

  LongitudinalPanel out;
  out.grid = panel.grid;
  out.marker_names = panel.marker_names;
  out.covariate_names = panel.covariate_names;
  out.subjects.reserve(panel.subjects.size());
  for (std::size_t i = 0; i < panel.subjects.size(); ++i) {
    const auto& s = panel.subjects[i];
    const int stratum = stratum_of(s);
    const StratumParams& sp = cond.at(stratum);
    const MatrixXd& root = roots.at(stratum);

    auto gen = rng::stream(seed, rng::Purpose::Pseudo, {replicate, static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> norm(0.0, 1.0);
    VectorXd u(2 * P);
    for (int k = 0; k < 2 * P; ++k) u(k) = norm(gen);
    const VectorXd gamma = root * u;

    SubjectRecord r;
    r.id = s.id;
    r.visits = J;
    r.event = false;
    r.covariates = s.covariates;
    r.markers.resize(P, J);
    for (int p = 0; p < P; ++p) {
      const double shift = q > 0 && sp.zeta_star.size() > 0 ? sp.zeta_star.row(p).dot(s.covariates) : 0.0;
      const double sd = std::sqrt(std::max(0.0, sp.sigma_eps2_star(p)));
      for (int j = 0; j < J; ++j) {
        const double t = panel.grid[j];
        r.markers(p, j) = trajectory(sp.beta_star, p, t) + shift + gamma(2 * p) + gamma(2 * p + 1) * t + sd * norm(gen);
      }
    }
    out.subjects.push_back(std::move(r));
  }
  return out;
}

ReplicateResult run_replicate(const LongitudinalPanel& panel, const ConditionalMvLmmParams& cond,
                              const CalibrationOptions& opts, int replicate) {
  ReplicateResult res;
  res.replicate = replicate;
  try {
    const LongitudinalPanel pseudo =
        simulate_pseudo_complete(cond, panel, opts.seed, static_cast<std::uint64_t>(replicate));
    PairwiseOptions popts = opts.pairwise;
    popts.threads = 1;
    PairwiseDiagnostics diag;
    res.longitudinal = fit_pairwise_marginal(pseudo, popts, &diag);
    res.lmm_converged = diag.all_converged();
    res.psd_repaired = diag.psd_repaired;

    const Calibration cal = calibrate(panel, res.longitudinal);
    const HazardData data = build_hazard_data(panel, cal.x_hat, &cal.error_cov);
    const TieMap tie = opts.tie ? *opts.tie : TieMap::distinct(panel.J() - 1);
    const SurvivalFit fit = fit_survival(data, tie, opts.survival);
    res.survival = fit.params;
    res.loglik = fit.loglik;
    res.survival_converged = fit.converged;
    res.separation = fit.separation;
    res.ok = true;
  } catch (const Error& e) {
    res.ok = false;
    res.error = std::string(to_string(e.kind())) + ": " + e.what();
  }
  return res;
}

CalibrationResult run_calibration(const LongitudinalPanel& panel, const CalibrationOptions& opts) {
  if (opts.M < 1) throw Error(ErrorKind::InvalidArgument, "M must be at least 1");
  CalibrationResult out;
  PairwiseOptions popts = opts.pairwise;
  popts.threads = opts.threads;
  out.conditional = fit_pairwise_conditional(panel, popts, &out.conditional_diagnostics);

  out.replicates.resize(static_cast<std::size_t>(opts.M));
  parallel_for(out.replicates.size(), opts.threads, [&](std::size_t r) {
    out.replicates[r] = run_replicate(panel, out.conditional, opts, static_cast<int>(r));
  });

  int ok = 0;
  bool all_converged = out.conditional_diagnostics.all_converged();
  for (const auto& r : out.replicates) {
    if (!r.ok) {
      ++out.failures;
      continue;
    }
    if (ok == 0) {
      out.survival = r.survival;
      out.longitudinal = r.longitudinal;
    } else {
      out.survival.alpha0 += r.survival.alpha0;
      out.survival.alpha += r.survival.alpha;
      out.survival.zeta += r.survival.zeta;
      out.longitudinal.beta += r.longitudinal.beta;
      out.longitudinal.sigma_gamma += r.longitudinal.sigma_gamma;
      out.longitudinal.sigma_eps2 += r.longitudinal.sigma_eps2;
      out.longitudinal.eta += r.longitudinal.eta;
    }
    ++ok;
    all_converged = all_converged && r.survival_converged && r.lmm_converged;
    out.separation = out.separation || r.separation;
  }
  if (2 * out.failures > opts.M) {
    std::string first;
    for (const auto& r : out.replicates) {
      if (!r.ok) {
        first = r.error;
        break;
      }
    }
    throw Error(ErrorKind::TooManyFailures, std::to_string(out.failures) + " of " + std::to_string(opts.M) +
                                                " calibration replicates failed; first: " + first);
  }
  const double inv = 1.0 / ok;
  out.survival.alpha0 *= inv;
  out.survival.alpha *= inv;
  out.survival.zeta *= inv;
  out.longitudinal.beta *= inv;
  out.longitudinal.sigma_gamma *= inv;
  out.longitudinal.sigma_eps2 *= inv;
  out.longitudinal.eta *= inv;
  out.converged = all_converged && out.failures == 0;
  return out;
}

void to_json(nlohmann::json& j, const CalibrationResult& r) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& rep : r.replicates) {
    nlohmann::json e{{"replicate", rep.replicate}, {"ok", rep.ok}};
    if (rep.ok) {
      e["survival"] = rep.survival;
      e["longitudinal"] = rep.longitudinal;
      e["loglik"] = rep.loglik;
      e["survival_converged"] = rep.survival_converged;
      e["lmm_converged"] = rep.lmm_converged;
      e["separation"] = rep.separation;
      e["psd_repaired"] = rep.psd_repaired;
    } else {
      e["error"] = rep.error;
    }
    reps.push_back(std::move(e));
  }
  j = nlohmann::json{{"survival", r.survival},
                     {"longitudinal", r.longitudinal},
                     {"conditional", r.conditional},
                     {"replicates", reps},
                     {"failures", r.failures},
                     {"converged", r.converged},
                     {"separation", r.separation}};
}

}  // namespace jmcal
