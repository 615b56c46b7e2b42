#include "jmcal/quadrature.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "jmcal/error.hpp"
#include "jmcal/kernels.hpp"
#include "jmcal/normal.hpp"
#include "jmcal/parallel.hpp"

namespace jmcal {

void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "quadrature needs at least one node");
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    // Asymptotic starting guesses for the largest roots, then extrapolation
    // from the previous two.
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * nodes[1];
    } else {
      z = 2.0 * z - nodes[static_cast<std::size_t>(i - 2)];
    }
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    nodes[static_cast<std::size_t>(i)] = z;
    nodes[static_cast<std::size_t>(n - 1 - i)] = -z;
    weights[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
    weights[static_cast<std::size_t>(n - 1 - i)] = weights[static_cast<std::size_t>(i)];
  }
  if (n % 2 == 1) nodes[static_cast<std::size_t>(n / 2)] = 0.0;
}

void normal_rule(const QuadSpec& spec, std::vector<double>& nodes, std::vector<double>& weights) {
  if (spec.rule == QuadRule::GaussHermite) {
    gauss_hermite(spec.nodes, nodes, weights);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      nodes[k] *= std::numbers::sqrt2;
      weights[k] /= std::sqrt(std::numbers::pi);
    }
    return;
  }
  if (spec.nodes < 2 || !(spec.radius > 0)) {
    throw Error(ErrorKind::InvalidArgument, "trapezoid rule needs at least two nodes and a positive radius");
  }
  const int n = spec.nodes;
  const double h = 2.0 * spec.radius / (n - 1);
  nodes.resize(static_cast<std::size_t>(n));
  weights.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double u = -spec.radius + k * h;
    nodes[static_cast<std::size_t>(k)] = u;
    weights[static_cast<std::size_t>(k)] = (k == 0 || k == n - 1 ? 0.5 : 1.0) * h * normal::pdf(u);
  }
}

namespace {

struct TensorNodes {
  std::vector<double> u0, u1, w;
};

TensorNodes tensor_nodes(const QuadSpec& spec) {
  std::vector<double> x, w;
  normal_rule(spec, x, w);
  TensorNodes t;
  for (std::size_t a = 0; a < x.size(); ++a) {
    for (std::size_t b = 0; b < x.size(); ++b) {
      const double wt = w[a] * w[b];
      if (wt == 0.0) continue;
      t.u0.push_back(x[a]);
      t.u1.push_back(x[b]);
      t.w.push_back(wt);
    }
  }
  return t;
}

Eigen::Matrix2d random_effect_root(const MatrixXd& sigma) {
  const Eigen::Matrix2d s = 0.5 * (sigma + sigma.transpose());
  Eigen::LLT<Eigen::Matrix2d> llt(s);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(s);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

void check_joint(const JointParamsP1& p, const LongitudinalPanel& panel) {
  if (panel.P() != 1) throw Error(ErrorKind::InvalidArgument, "the quadrature likelihood is for one marker only");
  const auto& l = p.longitudinal;
  if (l.beta.size() != 2 || l.sigma_gamma.rows() != 2 || l.sigma_gamma.cols() != 2 || l.sigma_eps2.size() != 1) {
    throw Error(ErrorKind::InvalidArgument, "single-marker longitudinal parameters have the wrong shape");
  }
  if (p.survival.alpha0.size() != panel.J() - 1 || p.survival.alpha.size() != 1) {
    throw Error(ErrorKind::InvalidArgument, "survival parameters do not match the grid");
  }
  const int q = panel.q();
  if (q > 0 && (p.survival.zeta.size() != q || l.eta.cols() != q)) {
    throw Error(ErrorKind::InvalidArgument, "covariate effects do not match the panel covariates");
  }
}

double subject_loglik(const JointParamsP1& p, const LongitudinalPanel& panel, const SubjectRecord& s,
                      const Eigen::Matrix2d& A, const kernels::NodeView& nodes, std::vector<double>& scratch) {
  const auto& l = p.longitudinal;
  const double s2 = l.sigma_eps2(0);
  const int q = panel.q();
  const double shift = q > 0 ? l.eta.row(0).dot(s.covariates) : 0.0;
  const double zlin = q > 0 ? p.survival.zeta.dot(s.covariates) : 0.0;

  kernels::QuadraticForm qf{0, 0, 0, 0, 0, 0};
  int n = 0;
  double rss = 0.0;
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  Eigen::Matrix2d H = Eigen::Matrix2d::Zero();
  for (int j = 0; j < s.visits; ++j) {
    const double y = s.markers(0, j);
    if (std::isnan(y)) continue;
    const double t = panel.grid[j];
    const double r = y - trajectory(l.beta, 0, t) - shift;
    const Eigen::Vector2d a = A.transpose() * Eigen::Vector2d(1.0, t);
    rss += r * r;
    b += r * a;
    H += a * a.transpose();
    ++n;
  }
  // The marker likelihood is Gaussian in u, so the rule is recentred on the
  // posterior N(m, P^-1), P = I + H / s2, leaving only the probit factors to
  // integrate numerically.
  const Eigen::Matrix2d Pm = Eigen::Matrix2d::Identity() + H / s2;
  const Eigen::LLT<Eigen::Matrix2d> llt(Pm);
  const Eigen::Vector2d m = llt.solve(b / s2);
  const Eigen::Matrix2d Lp = llt.matrixL();
  const Eigen::Matrix2d R = Lp.transpose().triangularView<Eigen::Upper>().solve(Eigen::Matrix2d::Identity());
  qf.c0 = -0.5 * n * std::log(2.0 * std::numbers::pi * s2) - 0.5 * rss / s2 + 0.5 * m.dot(Pm * m) -
          std::log(Lp(0, 0) * Lp(1, 1));

  const int rows = s.visits - 1 + (s.event ? 1 : 0);
  scratch.resize(static_cast<std::size_t>(3 * rows));
  double* off = scratch.data();
  double* sl0 = off + rows;
  double* sl1 = sl0 + rows;
  const double alpha = p.survival.alpha(0);
  for (int k = 0; k < rows; ++k) {
    const double t = panel.grid[k];
    const Eigen::Vector2d a = A.transpose() * Eigen::Vector2d(1.0, t);
    const double lin = p.survival.alpha0(k) + zlin + alpha * (trajectory(l.beta, 0, t) + shift);
    const double sign = s.event && k == s.visits - 1 ? 1.0 : -1.0;
    const Eigen::Vector2d sl = sign * alpha * a;
    const Eigen::Vector2d slv = R.transpose() * sl;
    off[k] = sign * lin + sl.dot(m);
    sl0[k] = slv(0);
    sl1[k] = slv(1);
  }
  const kernels::FactorView fv{off, sl0, sl1, static_cast<std::size_t>(rows)};
  const double v = kernels::log_integral(nodes, qf, fv);
  if (!std::isfinite(v)) {
    throw Error(ErrorKind::QuadratureUnstable, "non-finite integral for subject " + s.id);
  }
  return v;
}

}  // namespace

double joint_loglik_p1(const JointParamsP1& params, const LongitudinalPanel& panel, const QuadSpec& spec, int threads) {
  check_joint(params, panel);
  if (!(params.longitudinal.sigma_eps2(0) > 0)) {
    throw Error(ErrorKind::InvalidArgument, "residual variance must be positive");
  }
  const TensorNodes tn = tensor_nodes(spec);
  const kernels::NodeView nodes{tn.u0.data(), tn.u1.data(), tn.w.data(), tn.w.size()};
  const Eigen::Matrix2d A = random_effect_root(params.longitudinal.sigma_gamma);

  std::vector<double> parts(panel.subjects.size(), 0.0);
  const std::size_t chunk = 16;
  const std::size_t chunks = (parts.size() + chunk - 1) / chunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    std::vector<double> scratch;
    const std::size_t end = std::min(parts.size(), (c + 1) * chunk);
    for (std::size_t i = c * chunk; i < end; ++i) {
      parts[i] = subject_loglik(params, panel, panel.subjects[i], A, nodes, scratch);
    }
  });
  double ll = 0.0;
  for (double v : parts) ll += v;
  return ll;
}

namespace {

// theta = [beta0, beta1, log L00, L10, log L11, log sigma2, eta (q),
//          alpha0 groups, alpha (unless fixed), zeta (q)]
struct JointPacking {
  int q = 0;
  TieMap tie;
  bool fix_alpha = false;
  double fixed_alpha = 0.0;
  int J = 0;

  int dim() const { return 6 + q + tie.groups() + (fix_alpha ? 0 : 1) + q; }

  VectorXd pack(const JointParamsP1& p) const {
    VectorXd th(dim());
    th(0) = p.longitudinal.beta(0);
    th(1) = p.longitudinal.beta(1);
    Eigen::LLT<Eigen::Matrix2d> llt(Eigen::Matrix2d(p.longitudinal.sigma_gamma));
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorKind::InvalidArgument, "initial random-effect covariance must be positive definite");
    }
    const Eigen::Matrix2d L = llt.matrixL();
    th(2) = std::log(L(0, 0));
    th(3) = L(1, 0);
    th(4) = std::log(L(1, 1));
    th(5) = std::log(p.longitudinal.sigma_eps2(0));
    int k = 6;
    for (int c = 0; c < q; ++c) th(k++) = p.longitudinal.eta(0, c);
    for (int i = tie.intervals() - 1; i >= 0; --i) th(k + tie.group[static_cast<std::size_t>(i)]) = p.survival.alpha0(i);
    k += tie.groups();
    if (!fix_alpha) th(k++) = p.survival.alpha(0);
    for (int c = 0; c < q; ++c) th(k++) = p.survival.zeta(c);
    return th;
  }

  JointParamsP1 unpack(const VectorXd& th) const {
    JointParamsP1 p;
    p.longitudinal.beta = th.head(2);
    Eigen::Matrix2d L = Eigen::Matrix2d::Zero();
    L(0, 0) = std::exp(th(2));
    L(1, 0) = th(3);
    L(1, 1) = std::exp(th(4));
    p.longitudinal.sigma_gamma = L * L.transpose();
    p.longitudinal.sigma_eps2 = VectorXd::Constant(1, std::exp(th(5)));
    int k = 6;
    p.longitudinal.eta = MatrixXd(1, q);
    for (int c = 0; c < q; ++c) p.longitudinal.eta(0, c) = th(k++);
    p.survival.alpha0.resize(J - 1);
    for (int i = 0; i < J - 1; ++i) p.survival.alpha0(i) = th(k + tie.group[static_cast<std::size_t>(i)]);
    k += tie.groups();
    p.survival.alpha = VectorXd::Constant(1, fix_alpha ? fixed_alpha : th(k++));
    p.survival.zeta.resize(q);
    for (int c = 0; c < q; ++c) p.survival.zeta(c) = th(k++);
    return p;
  }
};

}  // namespace

JointMleFit joint_mle_p1(const LongitudinalPanel& panel, const JointParamsP1& init, const JointMleOptions& opts) {
  check_joint(init, panel);
  JointPacking pk;
  pk.q = panel.q();
  pk.J = panel.J();
  pk.tie = opts.tie.group.empty() ? TieMap::distinct(panel.J() - 1) : opts.tie;
  if (!pk.tie.valid() || pk.tie.intervals() != panel.J() - 1) {
    throw Error(ErrorKind::InvalidArgument, "tie map does not match the grid");
  }
  pk.fix_alpha = opts.fix_alpha;
  pk.fixed_alpha = init.survival.alpha(0);

  const auto value = [&](const VectorXd& th) {
    try {
      const double ll = joint_loglik_p1(pk.unpack(th), panel, opts.quad, opts.threads);
      return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::QuadratureUnstable) return std::numeric_limits<double>::infinity();
      throw;
    }
  };
  const Objective f = [&](const VectorXd& th, VectorXd* g) {
    const double v = value(th);
    if (g && std::isfinite(v)) *g = numeric_gradient(value, th, opts.fd_step);
    return v;
  };
  const VectorXd start = pk.pack(init);
  if (!std::isfinite(value(start))) {
    throw Error(ErrorKind::QuadratureUnstable, "joint likelihood is not finite at the initial values");
  }
  const OptimResult res = minimize_bfgs(f, start, opts.optim);
  JointMleFit fit;
  fit.params = pk.unpack(res.x);
  fit.loglik = -res.value;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  return fit;
}

void to_json(nlohmann::json& j, const JointParamsP1& p) {
  j = nlohmann::json{{"longitudinal", p.longitudinal}, {"survival", p.survival}};
}

}  // namespace jmcal
