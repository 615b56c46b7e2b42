#include "jmcal/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "jmcal/error.hpp"
#include "jmcal/normal.hpp"
#include "jmcal/parallel.hpp"
#include "jmcal/rng.hpp"

namespace jmcal {

namespace {

std::vector<double> reference_grid(bool from_one) {
  return from_one ? std::vector<double>{1, 2, 3, 4, 5} : std::vector<double>{0, 1, 2, 3, 4};
}

}  // namespace

TruthParams table1_truth(bool residual_variance_075, bool grid_from_one) {
  TruthParams t;
  t.grid.times = reference_grid(grid_from_one);
  t.marker_names = {"x1", "x2", "x3"};
  t.longitudinal.beta.resize(6);
  t.longitudinal.beta << 1.0, 0.0, 0.5, 0.0, 1.0, 0.0;
  t.longitudinal.sigma_gamma = 0.25 * MatrixXd::Identity(6, 6);
  t.longitudinal.sigma_eps2 = VectorXd::Constant(3, residual_variance_075 ? 0.75 : 0.75 * 0.75);
  t.longitudinal.eta = MatrixXd::Zero(3, 0);
  t.survival.alpha0 = VectorXd::Constant(4, -1.75);
  t.survival.alpha.resize(3);
  t.survival.alpha << 0.4, 0.0, 0.4;
  t.survival.zeta.resize(0);
  return t;
}

TruthParams single_marker_truth(bool grid_from_one) {
  TruthParams t;
  t.grid.times = reference_grid(grid_from_one);
  t.marker_names = {"x1"};
  t.longitudinal.beta.resize(2);
  t.longitudinal.beta << 1.0, 0.0;
  t.longitudinal.sigma_gamma = 0.25 * MatrixXd::Identity(2, 2);
  t.longitudinal.sigma_eps2 = VectorXd::Constant(1, 0.75 * 0.75);
  t.longitudinal.eta = MatrixXd::Zero(1, 0);
  t.survival.alpha0 = VectorXd::Constant(4, -1.75);
  t.survival.alpha = VectorXd::Constant(1, 0.4);
  t.survival.zeta.resize(0);
  return t;
}

namespace {

void check_truth(const TruthParams& t) {
  const int P = t.P();
  const int J = t.J();
  const int q = static_cast<int>(t.covariate_names.size());
  if (P < 1 || J < 2) throw Error(ErrorKind::InvalidArgument, "truth needs at least one marker and two grid times");
  if (t.longitudinal.beta.size() != 2 * P || t.longitudinal.sigma_gamma.rows() != 2 * P ||
      t.longitudinal.sigma_gamma.cols() != 2 * P) {
    throw Error(ErrorKind::InvalidArgument, "truth longitudinal parameters do not match P");
  }
  if (t.survival.alpha0.size() != J - 1 || t.survival.alpha.size() != P) {
    throw Error(ErrorKind::InvalidArgument, "truth survival parameters do not match the grid and P");
  }
  if (static_cast<int>(t.marker_names.size()) != P) {
    throw Error(ErrorKind::InvalidArgument, "truth needs one name per marker");
  }
  if (q > 0 && (t.longitudinal.eta.rows() != P || t.longitudinal.eta.cols() != q || t.survival.zeta.size() != q)) {
    throw Error(ErrorKind::InvalidArgument, "truth covariate effects do not match the covariate names");
  }
}

MatrixXd lower_root(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff())) {
    throw Error(ErrorKind::InvalidArgument, "random-effect covariance is not positive semi-definite");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

}  // namespace

GeneratedPanel generate_panel(const TruthParams& truth, int I, std::uint64_t seed, std::uint64_t replicate) {
  check_truth(truth);
  if (I < 1) throw Error(ErrorKind::InvalidArgument, "I must be positive");
  const int P = truth.P();
  const int J = truth.J();
  const int q = static_cast<int>(truth.covariate_names.size());
  const MatrixXd root = lower_root(truth.longitudinal.sigma_gamma);
  const VectorXd sd = truth.longitudinal.sigma_eps2.cwiseMax(0.0).cwiseSqrt();

  GeneratedPanel out;
  out.panel.grid = truth.grid;
  out.panel.marker_names = truth.marker_names;
  out.panel.covariate_names = truth.covariate_names;
  out.panel.subjects.reserve(static_cast<std::size_t>(I));
  for (int i = 0; i < I; ++i) {
    auto gen = rng::stream(seed, rng::Purpose::Generate, {replicate, static_cast<std::uint64_t>(i)});
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    VectorXd z(q);
    for (int c = 0; c < q; ++c) z(c) = norm(gen);
    VectorXd u(2 * P);
    for (int k = 0; k < 2 * P; ++k) u(k) = norm(gen);
    const VectorXd gamma = root * u;

    MatrixXd xt(P, J), xo(P, J);
    for (int p = 0; p < P; ++p) {
      const double shift = q > 0 ? truth.longitudinal.eta.row(p).dot(z) : 0.0;
      for (int j = 0; j < J; ++j) {
        const double t = truth.grid[j];
        xt(p, j) = trajectory(truth.longitudinal.beta, p, t) + shift + gamma(2 * p) + gamma(2 * p + 1) * t;
        xo(p, j) = xt(p, j) + sd(p) * norm(gen);
      }
    }

    int visits = J;
    bool event = false;
    for (int k = 0; k + 1 < J; ++k) {
      double lin = truth.survival.alpha0(k) + truth.survival.alpha.dot(xt.col(k));
      if (q > 0) lin += truth.survival.zeta.dot(z);
      if (unif(gen) < normal::cdf(lin)) {
        visits = k + 1;
        event = true;
        break;
      }
    }

    SubjectRecord s;
    s.id = std::to_string(i + 1);
    s.visits = visits;
    s.event = event;
    s.markers = xo.leftCols(visits);
    s.covariates = z;
    out.panel.subjects.push_back(std::move(s));
    out.x_true.push_back(std::move(xt));
    out.gamma.push_back(gamma);
  }
  return out;
}

std::string estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Truth:
      return "truth";
    case Estimator::Observed:
      return "observed";
    case Estimator::Proposed:
      return "proposed";
  }
  return "unknown";
}

int EstimatorSummary::index_of(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw Error(ErrorKind::InvalidArgument, "no parameter named " + name);
  return static_cast<int>(it - names.begin());
}

const EstimatorSummary& StudyReport::get(Estimator e) const {
  for (const auto& s : estimators) {
    if (s.estimator == e) return s;
  }
  throw Error(ErrorKind::InvalidArgument, "estimator " + estimator_name(e) + " was not run");
}

SurvivalFit fit_naive(const LongitudinalPanel& panel, const std::vector<MatrixXd>& trajectories, const TieMap& tie) {
  const HazardData data = build_hazard_data(panel, trajectories);
  SurvivalFitOptions opts;
  opts.mode = HazardMode::Naive;
  return fit_survival(data, tie, opts);
}

namespace {

struct Layout {
  std::vector<std::string> names;
  VectorXd truth;
};

Layout survival_layout(const TruthParams& truth, const TieMap& tie) {
  Layout l;
  std::vector<double> vals;
  const int G = tie.groups();
  for (int g = 0; g < G; ++g) {
    l.names.push_back(G == 1 ? "alpha0" : "alpha0_" + std::to_string(g + 1));
    int k = 0;
    while (tie.group[static_cast<std::size_t>(k)] != g) ++k;
    vals.push_back(truth.survival.alpha0(k));
  }
  for (int p = 0; p < truth.P(); ++p) {
    l.names.push_back("alpha" + std::to_string(p + 1));
    vals.push_back(truth.survival.alpha(p));
  }
  for (std::size_t c = 0; c < truth.covariate_names.size(); ++c) {
    l.names.push_back("zeta_" + truth.covariate_names[c]);
    vals.push_back(truth.survival.zeta(static_cast<Eigen::Index>(c)));
  }
  l.truth = Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return l;
}

Layout longitudinal_layout(const TruthParams& truth) {
  Layout l;
  std::vector<double> vals;
  const int P = truth.P();
  for (int p = 0; p < P; ++p) {
    for (int k = 0; k < 2; ++k) {
      l.names.push_back("beta" + std::to_string(p + 1) + std::to_string(k));
      vals.push_back(truth.longitudinal.beta(2 * p + k));
    }
  }
  for (int p = 0; p < P; ++p) {
    for (int k = 0; k < 2; ++k) {
      l.names.push_back("sigma2_b" + std::to_string(p + 1) + std::to_string(k));
      vals.push_back(truth.longitudinal.sigma_gamma(2 * p + k, 2 * p + k));
    }
  }
  for (int p = 0; p < P; ++p) {
    l.names.push_back("sigma2_eps" + std::to_string(p + 1));
    vals.push_back(truth.longitudinal.sigma_eps2(p));
  }
  l.truth = Eigen::Map<const VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return l;
}

VectorXd survival_vector(const SurvivalParams& s, const TieMap& tie) {
  const int G = tie.groups();
  VectorXd v(G + s.alpha.size() + s.zeta.size());
  for (int k = tie.intervals() - 1; k >= 0; --k) v(tie.group[static_cast<std::size_t>(k)]) = s.alpha0(k);
  v.segment(G, s.alpha.size()) = s.alpha;
  v.tail(s.zeta.size()) = s.zeta;
  return v;
}

VectorXd longitudinal_vector(const MvLmmParams& m) {
  const int P = m.P();
  VectorXd v(5 * P);
  v.head(2 * P) = m.beta;
  for (int k = 0; k < 2 * P; ++k) v(2 * P + k) = m.sigma_gamma(k, k);
  v.tail(P) = m.sigma_eps2;
  return v;
}

void summarize(EstimatorSummary& s) {
  const auto n = s.estimates.cols();
  s.mean = VectorXd::Zero(n);
  s.sd = VectorXd::Zero(n);
  s.rmse = VectorXd::Zero(n);
  int ok = 0;
  for (Eigen::Index r = 0; r < s.estimates.rows(); ++r) {
    if (s.estimates.row(r).hasNaN()) continue;
    s.mean += s.estimates.row(r).transpose();
    ++ok;
  }
  if (ok == 0) {
    s.mean.setConstant(std::numeric_limits<double>::quiet_NaN());
    s.sd = s.mean;
    s.rmse = s.mean;
    return;
  }
  s.mean /= ok;
  for (Eigen::Index r = 0; r < s.estimates.rows(); ++r) {
    if (s.estimates.row(r).hasNaN()) continue;
    const VectorXd d = s.estimates.row(r).transpose() - s.mean;
    const VectorXd e = s.estimates.row(r).transpose() - s.truth;
    s.sd += d.cwiseProduct(d);
    s.rmse += e.cwiseProduct(e);
  }
  s.sd = ok > 1 ? (s.sd / (ok - 1)).cwiseSqrt().eval()
                : VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  s.rmse = (s.rmse / ok).cwiseSqrt();
}

}  // namespace

StudyReport run_study(const TruthParams& truth, const StudyOptions& opts) {
  check_truth(truth);
  if (opts.replicates < 2) throw Error(ErrorKind::InvalidArgument, "a study needs at least 2 replicates");
  const TieMap tie = opts.tie.group.empty() ? TieMap::tied(truth.J() - 1) : opts.tie;
  if (!tie.valid() || tie.intervals() != truth.J() - 1) {
    throw Error(ErrorKind::InvalidArgument, "tie map does not match the grid");
  }
  const Layout surv = survival_layout(truth, tie);
  const Layout lon = longitudinal_layout(truth);
  const auto R = static_cast<Eigen::Index>(opts.replicates);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  StudyReport report;
  for (Estimator e : opts.estimators) {
    EstimatorSummary s;
    s.estimator = e;
    s.names = surv.names;
    s.truth = surv.truth;
    if (e == Estimator::Proposed) {
      s.names.insert(s.names.end(), lon.names.begin(), lon.names.end());
      s.truth.conservativeResize(surv.truth.size() + lon.truth.size());
      s.truth.tail(lon.truth.size()) = lon.truth;
    }
    s.estimates = MatrixXd::Constant(R, s.truth.size(), nan);
    s.errors.assign(static_cast<std::size_t>(R), "");
    report.estimators.push_back(std::move(s));
  }

  parallel_for(static_cast<std::size_t>(R), opts.threads, [&](std::size_t r) {
    const GeneratedPanel gp = generate_panel(truth, opts.I, opts.seed, r);
    for (auto& s : report.estimators) {
      const auto row = static_cast<Eigen::Index>(r);
      try {
        switch (s.estimator) {
          case Estimator::Truth:
            s.estimates.row(row) = survival_vector(fit_naive(gp.panel, gp.x_true, tie).params, tie).transpose();
            break;
          case Estimator::Observed: {
            std::vector<MatrixXd> obs;
            obs.reserve(gp.panel.subjects.size());
            for (const auto& subj : gp.panel.subjects) obs.push_back(subj.markers);
            s.estimates.row(row) = survival_vector(fit_naive(gp.panel, obs, tie).params, tie).transpose();
            break;
          }
          case Estimator::Proposed: {
            CalibrationOptions copts = opts.calibration;
            copts.tie = tie;
            copts.threads = 1;
            copts.seed = rng::derive(opts.seed, rng::Purpose::Replicate, {r});
            const CalibrationResult cr = run_calibration(gp.panel, copts);
            VectorXd v(s.truth.size());
            v << survival_vector(cr.survival, tie), longitudinal_vector(cr.longitudinal);
            s.estimates.row(row) = v.transpose();
            break;
          }
        }
      } catch (const Error& e) {
        s.errors[r] = std::string(to_string(e.kind())) + ": " + e.what();
      }
    }
  });

  for (auto& s : report.estimators) {
    s.failures = 0;
    for (Eigen::Index r = 0; r < R; ++r) s.failures += s.estimates.row(r).hasNaN() ? 1 : 0;
    summarize(s);
  }
  return report;
}

void to_json(nlohmann::json& j, const TruthParams& t) {
  j = nlohmann::json{{"grid", t.grid},
                     {"marker_names", t.marker_names},
                     {"covariate_names", t.covariate_names},
                     {"longitudinal", t.longitudinal},
                     {"survival", t.survival}};
}

void from_json(const nlohmann::json& j, TruthParams& t) {
  t.grid = j.at("grid").get<TimeGrid>();
  t.longitudinal = j.at("longitudinal").get<MvLmmParams>();
  t.survival = j.at("survival").get<SurvivalParams>();
  t.covariate_names = j.value("covariate_names", std::vector<std::string>{});
  if (j.contains("marker_names")) {
    t.marker_names = j.at("marker_names").get<std::vector<std::string>>();
  } else {
    t.marker_names.clear();
    for (int p = 0; p < t.longitudinal.P(); ++p) t.marker_names.push_back("x" + std::to_string(p + 1));
  }
  if (t.longitudinal.eta.size() == 0) t.longitudinal.eta = MatrixXd::Zero(t.longitudinal.P(), 0);
}

void to_json(nlohmann::json& j, const StudyReport& r) {
  j = nlohmann::json::object();
  for (const auto& s : r.estimators) {
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t k = 0; k < s.names.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(k);
      params.push_back({{"name", s.names[k]},
                        {"true", s.truth(i)},
                        {"mean", s.mean(i)},
                        {"sd", s.sd(i)},
                        {"rmse", s.rmse(i)}});
    }
    nlohmann::json errs = nlohmann::json::array();
    for (std::size_t k = 0; k < s.errors.size(); ++k) {
      if (!s.errors[k].empty()) errs.push_back({{"replicate", k}, {"error", s.errors[k]}});
    }
    j[estimator_name(s.estimator)] = {{"parameters", params}, {"failures", s.failures}, {"errors", errs}};
  }
}

}  // namespace jmcal
