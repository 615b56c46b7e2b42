#include "jmcal/survival.hpp"

#include <cmath>
#include <limits>

#include "jmcal/error.hpp"
#include "jmcal/normal.hpp"

namespace jmcal {

HazardData build_hazard_data(const LongitudinalPanel& panel, const std::vector<MatrixXd>& trajectories,
                             const std::vector<MatrixXd>* error_cov) {
  if (trajectories.size() != panel.subjects.size()) {
    throw Error(ErrorKind::InvalidArgument, "one trajectory matrix per subject is required");
  }
  if (error_cov && error_cov->size() != panel.subjects.size()) {
    throw Error(ErrorKind::InvalidArgument, "one calibration covariance per subject is required");
  }
  HazardData d;
  d.P = panel.P();
  d.q = panel.q();
  d.intervals = panel.J() - 1;

  int rows = 0;
  for (const auto& s : panel.subjects) rows += (s.visits - 1) + (s.event ? 1 : 0);
  d.interval.reserve(static_cast<std::size_t>(rows));
  d.subject.reserve(static_cast<std::size_t>(rows));
  d.event.reserve(static_cast<std::size_t>(rows));
  d.x.resize(rows, d.P);
  d.z.resize(rows, d.q);
  if (error_cov) d.w.resize(rows, d.P * d.P);

  int row = 0;
  for (std::size_t i = 0; i < panel.subjects.size(); ++i) {
    const auto& s = panel.subjects[i];
    const MatrixXd& traj = trajectories[i];
    if (traj.rows() != d.P || traj.cols() < s.visits) {
      throw Error(ErrorKind::InvalidArgument, "trajectory for subject " + s.id + " has the wrong shape");
    }
    const int last = s.event ? s.visits : s.visits - 1;
    VectorXd carried = VectorXd::Constant(d.P, std::numeric_limits<double>::quiet_NaN());
    for (int k = 0; k < last; ++k) {
      for (int p = 0; p < d.P; ++p) {
        if (!std::isnan(traj(p, k))) carried(p) = traj(p, k);
      }
      if (carried.hasNaN()) {
        throw Error(ErrorKind::InvalidArgument, "subject " + s.id + " has no marker value to lag at visit " +
                                                    std::to_string(k + 1));
      }
      d.interval.push_back(k);
      d.subject.push_back(static_cast<int>(i));
      d.event.push_back(s.event && k == s.visits - 1 ? 1 : 0);
      d.x.row(row) = carried.transpose();
      if (d.q > 0) d.z.row(row) = s.covariates.transpose();
      if (error_cov) {
        const MatrixXd& C = (*error_cov)[i];
        const double t = panel.grid[k];
        for (int p = 0; p < d.P; ++p) {
          for (int r = 0; r < d.P; ++r) {
            const double w = C(2 * p, 2 * r) + t * (C(2 * p + 1, 2 * r) + C(2 * p, 2 * r + 1)) +
                             t * t * C(2 * p + 1, 2 * r + 1);
            d.w(row, p * d.P + r) = w;
          }
        }
      }
      ++row;
    }
  }
  return d;
}

double hazard(const SurvivalParams& params, int interval, const VectorXd& x, const VectorXd& z, double v) {
  double lin = params.alpha0(interval) + params.alpha.dot(x);
  if (params.zeta.size() > 0) lin += params.zeta.dot(z);
  return normal::cdf(lin / std::sqrt(1.0 + v));
}

double calibration_variance(const MatrixXd& error_cov, const VectorXd& omega, double t) {
  const Eigen::Index P = omega.size();
  VectorXd R(2 * P);
  for (Eigen::Index p = 0; p < P; ++p) {
    R(2 * p) = omega(p);
    R(2 * p + 1) = omega(p) * t;
  }
  return R.dot(error_cov * R);
}

VectorXd pack_survival(const SurvivalParams& params, const TieMap& tie) {
  const int G = tie.groups();
  const auto P = params.alpha.size();
  const auto q = params.zeta.size();
  VectorXd theta(G + P + q);
  for (int k = tie.intervals() - 1; k >= 0; --k) theta(tie.group[static_cast<std::size_t>(k)]) = params.alpha0(k);
  theta.segment(G, P) = params.alpha;
  theta.tail(q) = params.zeta;
  return theta;
}

SurvivalParams unpack_survival(const VectorXd& theta, const TieMap& tie, int P, int q) {
  const int G = tie.groups();
  SurvivalParams p;
  p.alpha0.resize(tie.intervals());
  for (int k = 0; k < tie.intervals(); ++k) p.alpha0(k) = theta(tie.group[static_cast<std::size_t>(k)]);
  p.alpha = theta.segment(G, P);
  p.zeta = theta.tail(q);
  return p;
}

double survival_loglik_packed(const VectorXd& theta, const HazardData& data, const TieMap& tie, HazardMode mode,
                              const VectorXd* omega, VectorXd* grad) {
  const int G = tie.groups();
  const int P = data.P;
  const int q = data.q;
  const bool has_w = data.w.size() > 0;
  if (mode != HazardMode::Naive && !has_w) {
    throw Error(ErrorKind::InvalidArgument, "calibrated hazard needs calibration variances");
  }
  if (mode == HazardMode::FrozenOmega && (!omega || omega->size() != P)) {
    throw Error(ErrorKind::InvalidArgument, "frozen-omega hazard needs omega of length P");
  }
  const VectorXd alpha = theta.segment(G, P);
  const VectorXd zeta = theta.tail(q);
  if (grad) *grad = VectorXd::Zero(theta.size());

  double ll = 0.0;
  VectorXd Wa(P);
  for (int r = 0; r < data.rows(); ++r) {
    const int g = tie.group[static_cast<std::size_t>(data.interval[static_cast<std::size_t>(r)])];
    double lin = theta(g) + data.x.row(r).dot(alpha);
    if (q > 0) lin += data.z.row(r).dot(zeta);

    double s = 1.0;
    if (mode != HazardMode::Naive) {
      const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
          data.w.row(r).data(), P, P);
      const VectorXd& om = mode == HazardMode::Corrected ? alpha : *omega;
      Wa = W * om;
      const double v = om.dot(Wa);
      s = std::sqrt(1.0 + std::max(0.0, v));
    }
    const double u = lin / s;
    const bool ev = data.event[static_cast<std::size_t>(r)] != 0;
    ll += ev ? normal::log_cdf(u) : normal::log_cdf(-u);
    if (grad) {
      const double dldu = ev ? normal::mills(u) : -normal::mills(-u);
      const double k = dldu / s;
      (*grad)(g) += k;
      grad->segment(G, P) += k * data.x.row(r).transpose();
      if (q > 0) grad->tail(q) += k * data.z.row(r).transpose();
      if (mode == HazardMode::Corrected) grad->segment(G, P) -= dldu * (lin / (s * s * s)) * Wa;
    }
  }
  return ll;
}

double survival_loglik(const SurvivalParams& params, const HazardData& data, const TieMap& tie, HazardMode mode,
                       const VectorXd* omega) {
  return survival_loglik_packed(pack_survival(params, tie), data, tie, mode, omega, nullptr);
}

namespace {

void check_data(const HazardData& data, const TieMap& tie) {
  if (!tie.valid() || tie.intervals() != data.intervals) {
    throw Error(ErrorKind::InvalidArgument, "tie map must cover every hazard interval");
  }
  if (data.rows() == 0) throw Error(ErrorKind::InvalidArgument, "no subject-intervals at risk");
}

VectorXd start_values(const HazardData& data, const TieMap& tie) {
  const int G = tie.groups();
  std::vector<double> events(static_cast<std::size_t>(G), 0.0), at_risk(static_cast<std::size_t>(G), 0.0);
  for (int r = 0; r < data.rows(); ++r) {
    const auto g = static_cast<std::size_t>(tie.group[static_cast<std::size_t>(data.interval[static_cast<std::size_t>(r)])]);
    at_risk[g] += 1.0;
    events[g] += data.event[static_cast<std::size_t>(r)];
  }
  VectorXd theta = VectorXd::Zero(G + data.P + data.q);
  for (int g = 0; g < G; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    const double rate = (events[gi] + 0.5) / (at_risk[gi] + 1.0);
    theta(g) = normal::quantile(rate);
  }
  return theta;
}

bool structural_separation(const HazardData& data, const TieMap& tie) {
  const int G = tie.groups();
  std::vector<int> events(static_cast<std::size_t>(G), 0), survivals(static_cast<std::size_t>(G), 0);
  for (int r = 0; r < data.rows(); ++r) {
    const auto g = static_cast<std::size_t>(tie.group[static_cast<std::size_t>(data.interval[static_cast<std::size_t>(r)])]);
    (data.event[static_cast<std::size_t>(r)] ? events[g] : survivals[g])++;
  }
  for (int g = 0; g < G; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    if (events[gi] + survivals[gi] > 0 && (events[gi] == 0 || survivals[gi] == 0)) return true;
  }
  return false;
}

SurvivalFit run_fit(const HazardData& data, const TieMap& tie, HazardMode mode, const VectorXd* omega,
                    const VectorXd& start, const SurvivalFitOptions& opts) {
  const Objective f = [&](const VectorXd& theta, VectorXd* g) {
    const double ll = survival_loglik_packed(theta, data, tie, mode, omega, g);
    if (g) *g = -*g;
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
  };
  const OptimResult res = minimize_bfgs(f, start, opts.optim);
  SurvivalFit fit;
  fit.params = unpack_survival(res.x, tie, data.P, data.q);
  fit.loglik = -res.value;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  fit.separation = res.x.lpNorm<Eigen::Infinity>() > opts.separation_bound;
  return fit;
}

}  // namespace

SurvivalFit fit_survival(const HazardData& data, const TieMap& tie, const SurvivalFitOptions& opts) {
  check_data(data, tie);
  const VectorXd start = start_values(data, tie);

  SurvivalFit fit;
  switch (opts.mode) {
    case HazardMode::Naive:
      fit = run_fit(data, tie, HazardMode::Naive, nullptr, start, opts);
      break;
    case HazardMode::Corrected: {
      // Warm start from the frozen-denominator problem at the naive solution.
      SurvivalFit naive = run_fit(data, tie, HazardMode::Naive, nullptr, start, opts);
      fit = run_fit(data, tie, HazardMode::Corrected, nullptr, pack_survival(naive.params, tie), opts);
      fit.iterations += naive.iterations;
      break;
    }
    case HazardMode::FrozenOmega: {
      VectorXd omega;
      VectorXd theta = start;
      if (opts.omega) {
        omega = *opts.omega;
      } else {
        const SurvivalFit naive = run_fit(data, tie, HazardMode::Naive, nullptr, start, opts);
        omega = naive.params.alpha;
        theta = pack_survival(naive.params, tie);
      }
      int total = 0;
      bool settled = false;
      for (int it = 0; it < opts.max_fixed_point; ++it) {
        fit = run_fit(data, tie, HazardMode::FrozenOmega, &omega, theta, opts);
        total += fit.iterations;
        theta = pack_survival(fit.params, tie);
        const double change = (fit.params.alpha - omega).lpNorm<Eigen::Infinity>();
        omega = fit.params.alpha;
        if (change < 1e-8) {
          settled = true;
          break;
        }
      }
      fit.iterations = total;
      fit.converged = fit.converged && settled;
      break;
    }
  }
  fit.separation = fit.separation || structural_separation(data, tie);
  return fit;
}

}  // namespace jmcal
