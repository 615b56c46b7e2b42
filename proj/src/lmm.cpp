#include "jmcal/lmm.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>
#include <unordered_map>

#include "jmcal/error.hpp"

namespace jmcal {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void append_bytes(std::string& key, const void* data, std::size_t bytes) {
  key.append(static_cast<const char*>(data), bytes);
}

std::string pattern_key(const LmmBlock& b) {
  std::string key;
  const Eigen::Index dims[4] = {b.fixed.rows(), b.fixed.cols(), b.random.rows(), b.random.cols()};
  append_bytes(key, dims, sizeof dims);
  append_bytes(key, b.fixed.data(), sizeof(double) * static_cast<std::size_t>(b.fixed.size()));
  append_bytes(key, b.random.data(), sizeof(double) * static_cast<std::size_t>(b.random.size()));
  append_bytes(key, b.residual.data(), sizeof(int) * b.residual.size());
  return key;
}

// Lower-triangular factor with a tiny ridge when Sigma is only PSD.
MatrixXd cholesky_factor(const MatrixXd& sigma) {
  const Eigen::Index r = sigma.rows();
  const double scale = std::max(1e-12, sigma.diagonal().cwiseAbs().maxCoeff());
  for (double ridge : {0.0, 1e-10, 1e-8, 1e-6}) {
    Eigen::LLT<MatrixXd> llt(sigma + ridge * scale * MatrixXd::Identity(r, r));
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sigma);
  const VectorXd ev = es.eigenvalues().cwiseMax(1e-6 * scale);
  Eigen::LLT<MatrixXd> llt(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  return llt.matrixL();
}

std::vector<double> residual_group_variances(const LmmProblem& problem) {
  const auto m = static_cast<std::size_t>(problem.n_residual);
  std::vector<double> s(m, 0.0), ss(m, 0.0), n(m, 0.0);
  for (const auto& b : problem.blocks) {
    for (Eigen::Index k = 0; k < b.y.size(); ++k) {
      const auto g = static_cast<std::size_t>(b.residual[static_cast<std::size_t>(k)]);
      s[g] += b.y(k);
      ss[g] += b.y(k) * b.y(k);
      n[g] += 1.0;
    }
  }
  std::vector<double> var(m, 0.0);
  for (std::size_t g = 0; g < m; ++g) {
    if (n[g] > 1) var[g] = std::max(0.0, (ss[g] - s[g] * s[g] / n[g]) / (n[g] - 1.0));
  }
  return var;
}

}  // namespace

LmmObjective::LmmObjective(const LmmProblem& problem, const LmmEstimate& base, bool fix_beta,
                           bool fix_sigma)
    : k_(problem.n_fixed),
      r_(problem.n_random),
      m_(problem.n_residual),
      fix_beta_(fix_beta),
      fix_sigma_(fix_sigma),
      base_(base) {
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& b : problem.blocks) {
    if (b.y.size() == 0) continue;
    auto [it, inserted] = index.try_emplace(pattern_key(b), patterns_.size());
    if (inserted) {
      Pattern p;
      p.F = b.fixed;
      p.Z = b.random;
      p.residual = b.residual;
      p.sum_y = VectorXd::Zero(b.y.size());
      p.sum_yy = MatrixXd::Zero(b.y.size(), b.y.size());
      patterns_.push_back(std::move(p));
    }
    Pattern& p = patterns_[it->second];
    p.count += 1.0;
    p.sum_y += b.y;
    p.sum_yy.noalias() += b.y * b.y.transpose();
  }
}

int LmmObjective::dim() const {
  return (fix_beta_ ? 0 : k_) + (fix_sigma_ ? 0 : r_ * (r_ + 1) / 2) + m_;
}

VectorXd LmmObjective::pack(const LmmEstimate& est) const {
  VectorXd theta(dim());
  int at = 0;
  if (!fix_beta_) {
    theta.head(k_) = est.beta;
    at = k_;
  }
  if (!fix_sigma_) {
    const MatrixXd L = cholesky_factor(est.sigma);
    for (int j = 0; j < r_; ++j) {
      for (int i = j; i < r_; ++i) theta(at++) = i == j ? std::log(L(i, i)) : L(i, j);
    }
  }
  for (int g = 0; g < m_; ++g) theta(at++) = std::log(est.resid(g));
  return theta;
}

LmmEstimate LmmObjective::unpack(const VectorXd& theta) const {
  LmmEstimate est;
  int at = 0;
  if (fix_beta_) {
    est.beta = base_.beta;
  } else {
    est.beta = theta.head(k_);
    at = k_;
  }
  if (fix_sigma_) {
    est.sigma = base_.sigma;
  } else {
    MatrixXd L = MatrixXd::Zero(r_, r_);
    for (int j = 0; j < r_; ++j) {
      for (int i = j; i < r_; ++i) L(i, j) = i == j ? std::exp(theta(at++)) : theta(at++);
    }
    est.sigma = L * L.transpose();
  }
  est.resid.resize(m_);
  for (int g = 0; g < m_; ++g) est.resid(g) = std::exp(theta(at++));
  return est;
}

double LmmObjective::operator()(const VectorXd& theta, VectorXd* grad) const {
  int at = fix_beta_ ? 0 : k_;
  MatrixXd L;
  MatrixXd sigma;
  if (fix_sigma_) {
    sigma = base_.sigma;
  } else {
    L = MatrixXd::Zero(r_, r_);
    for (int j = 0; j < r_; ++j) {
      for (int i = j; i < r_; ++i) L(i, j) = i == j ? std::exp(theta(at++)) : theta(at++);
    }
    sigma = L * L.transpose();
  }
  const VectorXd beta = fix_beta_ ? base_.beta : VectorXd(theta.head(k_));
  VectorXd resid(m_);
  for (int g = 0; g < m_; ++g) resid(g) = std::exp(theta(at++));
  if (!beta.allFinite() || !sigma.allFinite() || !resid.allFinite()) {
    return std::numeric_limits<double>::infinity();
  }

  double ll = 0.0;
  VectorXd g_beta = VectorXd::Zero(k_);
  MatrixXd h_sigma = MatrixXd::Zero(r_, r_);
  VectorXd g_resid = VectorXd::Zero(m_);

  for (const auto& p : patterns_) {
    const Eigen::Index n = p.F.rows();
    MatrixXd V = p.Z * sigma * p.Z.transpose();
    for (Eigen::Index j = 0; j < n; ++j) V(j, j) += resid(p.residual[static_cast<std::size_t>(j)]);
    Eigen::LLT<MatrixXd> llt(V);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const MatrixXd Lv = llt.matrixL();
    const double logdet = 2.0 * Lv.diagonal().array().log().sum();
    const MatrixXd Vinv = llt.solve(MatrixXd::Identity(n, n));

    const VectorXd mu = p.F * beta;
    MatrixXd S = p.sum_yy - p.sum_y * mu.transpose() - mu * p.sum_y.transpose() + p.count * mu * mu.transpose();
    const MatrixXd VinvS = Vinv * S;
    ll -= 0.5 * (p.count * (static_cast<double>(n) * kLog2Pi + logdet) + VinvS.trace());

    if (grad) {
      if (!fix_beta_) g_beta.noalias() += p.F.transpose() * (Vinv * (p.sum_y - p.count * mu));
      const MatrixXd G = 0.5 * (VinvS * Vinv - p.count * Vinv);
      if (!fix_sigma_) h_sigma.noalias() += p.Z.transpose() * G * p.Z;
      for (Eigen::Index j = 0; j < n; ++j) g_resid(p.residual[static_cast<std::size_t>(j)]) += G(j, j);
    }
  }
  if (!std::isfinite(ll)) return std::numeric_limits<double>::infinity();

  if (grad) {
    grad->resize(dim());
    int pos = 0;
    if (!fix_beta_) {
      grad->head(k_) = -g_beta;
      pos = k_;
    }
    if (!fix_sigma_) {
      const MatrixXd dL = 2.0 * h_sigma * L;
      for (int j = 0; j < r_; ++j) {
        for (int i = j; i < r_; ++i) (*grad)(pos++) = -(i == j ? dL(i, i) * L(i, i) : dL(i, j));
      }
    }
    for (int g = 0; g < m_; ++g) (*grad)(pos++) = -g_resid(g) * resid(g);
  }
  return -ll;
}

double lmm_loglik(const LmmProblem& problem, const LmmEstimate& est) {
  // Evaluate with everything fixed except the residual variances, which are
  // passed through unchanged.
  LmmObjective obj(problem, est, true, true);
  return -obj(obj.pack(est), nullptr);
}

LmmEstimate lmm_start_values(const LmmProblem& problem) {
  const int k = problem.n_fixed;
  const int r = problem.n_random;
  const int m = problem.n_residual;
  LmmEstimate est;

  MatrixXd FtF = MatrixXd::Zero(k, k);
  VectorXd Fty = VectorXd::Zero(k);
  for (const auto& b : problem.blocks) {
    FtF.noalias() += b.fixed.transpose() * b.fixed;
    Fty.noalias() += b.fixed.transpose() * b.y;
  }
  est.beta = FtF.completeOrthogonalDecomposition().solve(Fty);

  // Per-subject least squares on the random design.
  std::vector<double> ss(static_cast<std::size_t>(m), 0.0), dof(static_cast<std::size_t>(m), 0.0);
  std::vector<double> es(static_cast<std::size_t>(m), 0.0), ess(static_cast<std::size_t>(m), 0.0),
      en(static_cast<std::size_t>(m), 0.0);
  std::vector<VectorXd> coefs;
  for (const auto& b : problem.blocks) {
    const VectorXd e = b.y - b.fixed * est.beta;
    for (Eigen::Index j = 0; j < e.size(); ++j) {
      const auto g = static_cast<std::size_t>(b.residual[static_cast<std::size_t>(j)]);
      es[g] += e(j);
      ess[g] += e(j) * e(j);
      en[g] += 1;
    }
    if (r == 0 || b.y.size() <= r) continue;
    Eigen::ColPivHouseholderQR<MatrixXd> qr(b.random);
    if (qr.rank() < r) continue;
    const VectorXd c = qr.solve(e);
    const VectorXd res = e - b.random * c;
    std::vector<double> n_obs(static_cast<std::size_t>(m), 0.0), n_ran(static_cast<std::size_t>(m), 0.0);
    for (std::size_t j = 0; j < b.residual.size(); ++j) n_obs[static_cast<std::size_t>(b.residual[j])] += 1;
    for (int c2 = 0; c2 < r; ++c2) n_ran[static_cast<std::size_t>(problem.random_group[static_cast<std::size_t>(c2)])] += 1;
    for (std::size_t j = 0; j < b.residual.size(); ++j) {
      const auto g = static_cast<std::size_t>(b.residual[j]);
      if (n_obs[g] > n_ran[g]) ss[g] += res(static_cast<Eigen::Index>(j)) * res(static_cast<Eigen::Index>(j));
    }
    for (int g = 0; g < m; ++g) {
      const auto gi = static_cast<std::size_t>(g);
      if (n_obs[gi] > n_ran[gi]) dof[gi] += n_obs[gi] - n_ran[gi];
    }
    coefs.push_back(c);
  }

  est.resid.resize(m);
  std::vector<double> evar(static_cast<std::size_t>(m), 1.0);
  for (int g = 0; g < m; ++g) {
    const auto gi = static_cast<std::size_t>(g);
    evar[gi] = en[gi] > 1 ? std::max(1e-8, (ess[gi] - es[gi] * es[gi] / en[gi]) / (en[gi] - 1)) : 1.0;
    est.resid(g) = dof[gi] > 0 ? std::max(ss[gi] / dof[gi], 1e-3 * evar[gi]) : 0.5 * evar[gi];
  }

  if (r == 0) {
    est.sigma.resize(0, 0);
    return est;
  }
  MatrixXd S = MatrixXd::Zero(r, r);
  if (coefs.size() > static_cast<std::size_t>(r)) {
    VectorXd mean = VectorXd::Zero(r);
    for (const auto& c : coefs) mean += c;
    mean /= static_cast<double>(coefs.size());
    for (const auto& c : coefs) S.noalias() += (c - mean) * (c - mean).transpose();
    S /= static_cast<double>(coefs.size() - 1);
    // Shrink halfway toward the diagonal.
    const VectorXd d = S.diagonal();
    S *= 0.5;
    S.diagonal() = d;
  } else {
    for (int c = 0; c < r; ++c) {
      S(c, c) = 0.5 * evar[static_cast<std::size_t>(problem.random_group[static_cast<std::size_t>(c)])];
    }
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es2(S);
  const double top = std::max(es2.eigenvalues().maxCoeff(), 1e-8);
  const VectorXd ev = es2.eigenvalues().cwiseMax(1e-3 * top);
  est.sigma = es2.eigenvectors() * ev.asDiagonal() * es2.eigenvectors().transpose();
  return est;
}

LmmFit fit_lmm(const LmmProblem& problem, const std::optional<LmmEstimate>& init, const LmmFitOptions& opts) {
  if (problem.blocks.size() < 2) throw Error(ErrorKind::InvalidArgument, "fit_lmm needs at least 2 subjects");
  for (const auto& b : problem.blocks) {
    if (b.y.size() == 0) throw Error(ErrorKind::InvalidArgument, "fit_lmm: subject without observations");
  }
  const LmmEstimate start = init ? *init : lmm_start_values(problem);
  LmmObjective obj(problem, start, opts.fix_beta, opts.fix_sigma);
  const Objective f = [&obj](const VectorXd& x, VectorXd* g) { return obj(x, g); };
  const OptimResult res = minimize_bfgs(f, obj.pack(start), opts.optim);

  LmmFit fit;
  fit.estimate = obj.unpack(res.x);
  fit.loglik = -res.value;
  fit.converged = res.converged && std::isfinite(fit.loglik);
  fit.iterations = res.iterations;

  const auto var = residual_group_variances(problem);
  for (int g = 0; g < problem.n_residual; ++g) {
    if (fit.estimate.resid(g) < opts.resid_floor * var[static_cast<std::size_t>(g)]) {
      throw Error(ErrorKind::SingularFit, "residual variance " + std::to_string(g) + " collapsed below floor");
    }
  }

  const int k = problem.n_fixed;
  MatrixXd info = MatrixXd::Zero(k, k);
  for (const auto& b : problem.blocks) {
    MatrixXd V = b.random * fit.estimate.sigma * b.random.transpose();
    for (Eigen::Index j = 0; j < V.rows(); ++j) V(j, j) += fit.estimate.resid(b.residual[static_cast<std::size_t>(j)]);
    Eigen::LLT<MatrixXd> llt(V);
    info.noalias() += b.fixed.transpose() * llt.solve(b.fixed);
  }
  fit.fixed_cov = info.completeOrthogonalDecomposition().pseudoInverse();
  return fit;
}

namespace {

struct SubjectDesign {
  VectorXd y;
  VectorXd mean;
  MatrixXd Z;  // n x 2P
  MatrixXd F;  // n x (2P + P q)
  std::string mask;
};

SubjectDesign design_for(const SubjectRecord& s, const TimeGrid& grid, const MvLmmParams& params) {
  const int P = static_cast<int>(s.markers.rows());
  const int q = static_cast<int>(s.covariates.size());
  const bool with_eta = q > 0 && params.eta.size() > 0;
  int n = 0;
  for (Eigen::Index k = 0; k < s.markers.size(); ++k) n += std::isnan(s.markers.data()[k]) ? 0 : 1;
  SubjectDesign d;
  d.y.resize(n);
  d.mean.resize(n);
  d.Z = MatrixXd::Zero(n, 2 * P);
  d.F = MatrixXd::Zero(n, 2 * P + (with_eta ? P * q : 0));
  d.mask.reserve(static_cast<std::size_t>(s.markers.size()) + 1);
  d.mask.push_back(static_cast<char>(s.visits));
  int row = 0;
  for (int p = 0; p < P; ++p) {
    const double shift = with_eta ? params.eta.row(p).dot(s.covariates) : 0.0;
    for (int j = 0; j < s.visits; ++j) {
      const double v = s.markers(p, j);
      d.mask.push_back(std::isnan(v) ? '0' : '1');
      if (std::isnan(v)) continue;
      const double t = grid[j];
      d.y(row) = v;
      d.mean(row) = trajectory(params.beta, p, t) + shift;
      d.Z(row, 2 * p) = 1.0;
      d.Z(row, 2 * p + 1) = t;
      d.F(row, 2 * p) = 1.0;
      d.F(row, 2 * p + 1) = t;
      if (with_eta) {
        for (int c = 0; c < q; ++c) d.F(row, 2 * P + p * q + c) = s.covariates(c);
      }
      ++row;
    }
  }
  return d;
}

struct MaskCache {
  MatrixXd Vinv;
  MatrixXd SigmaZtVinv;  // Sigma Z' V^-1
};

MaskCache make_mask_cache(const SubjectDesign& d, const MvLmmParams& params, const std::vector<int>& marker_of_row) {
  MatrixXd V = d.Z * params.sigma_gamma * d.Z.transpose();
  for (Eigen::Index j = 0; j < V.rows(); ++j) V(j, j) += params.sigma_eps2(marker_of_row[static_cast<std::size_t>(j)]);
  Eigen::LLT<MatrixXd> llt(V);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularV, "V_i is not positive definite");
  MaskCache c;
  c.Vinv = llt.solve(MatrixXd::Identity(V.rows(), V.rows()));
  if (!c.Vinv.allFinite()) throw Error(ErrorKind::SingularV, "V_i is not invertible at working precision");
  c.SigmaZtVinv = params.sigma_gamma * d.Z.transpose() * c.Vinv;
  return c;
}

std::vector<int> row_markers(const SubjectRecord& s) {
  std::vector<int> out;
  for (Eigen::Index p = 0; p < s.markers.rows(); ++p) {
    for (Eigen::Index j = 0; j < s.markers.cols(); ++j) {
      if (!std::isnan(s.markers(p, j))) out.push_back(static_cast<int>(p));
    }
  }
  return out;
}

void check_params(const LongitudinalPanel& panel, const MvLmmParams& params) {
  const int P = panel.P();
  if (params.beta.size() != 2 * P || params.sigma_gamma.rows() != 2 * P || params.sigma_gamma.cols() != 2 * P ||
      params.sigma_eps2.size() != P) {
    throw Error(ErrorKind::InvalidArgument, "MvLmmParams dimensions do not match the panel");
  }
  if (panel.q() > 0 && params.eta.size() > 0 && (params.eta.rows() != P || params.eta.cols() != panel.q())) {
    throw Error(ErrorKind::InvalidArgument, "eta dimensions do not match the panel covariates");
  }
}

}  // namespace

std::vector<VectorXd> eb_posterior_means(const LongitudinalPanel& panel, const MvLmmParams& params) {
  check_params(panel, params);
  std::unordered_map<std::string, MaskCache> cache;
  std::vector<VectorXd> out;
  out.reserve(panel.subjects.size());
  for (const auto& s : panel.subjects) {
    const SubjectDesign d = design_for(s, panel.grid, params);
    auto it = cache.find(d.mask);
    if (it == cache.end()) it = cache.emplace(d.mask, make_mask_cache(d, params, row_markers(s))).first;
    out.push_back(it->second.SigmaZtVinv * (d.y - d.mean));
  }
  return out;
}

std::vector<MatrixXd> calibration_covariance(const LongitudinalPanel& panel, const MvLmmParams& params) {
  check_params(panel, params);
  std::unordered_map<std::string, MaskCache> cache;
  std::vector<SubjectDesign> designs;
  std::vector<const MaskCache*> caches;
  designs.reserve(panel.subjects.size());
  for (const auto& s : panel.subjects) {
    designs.push_back(design_for(s, panel.grid, params));
    auto it = cache.find(designs.back().mask);
    if (it == cache.end()) it = cache.emplace(designs.back().mask, make_mask_cache(designs.back(), params, row_markers(s))).first;
    caches.push_back(&it->second);
  }
  if (designs.empty()) return {};

  const Eigen::Index kf = designs.front().F.cols();
  MatrixXd info = MatrixXd::Zero(kf, kf);
  for (std::size_t i = 0; i < designs.size(); ++i) {
    info.noalias() += designs[i].F.transpose() * caches[i]->Vinv * designs[i].F;
  }
  Eigen::LLT<MatrixXd> info_llt(info);
  if (info_llt.info() != Eigen::Success) throw Error(ErrorKind::SingularQ, "sum of F' V^-1 F is singular");
  const MatrixXd Q = info_llt.solve(MatrixXd::Identity(kf, kf));
  if (!Q.allFinite()) throw Error(ErrorKind::SingularQ, "Q is not finite");

  const MatrixXd& sigma = params.sigma_gamma;
  std::vector<MatrixXd> out;
  out.reserve(designs.size());
  for (std::size_t i = 0; i < designs.size(); ++i) {
    const auto& d = designs[i];
    const MatrixXd& Vinv = caches[i]->Vinv;
    const MatrixXd VinvF = Vinv * d.F;
    const MatrixXd Pm = Vinv - VinvF * Q * VinvF.transpose();
    const MatrixXd SZt = sigma * d.Z.transpose();
    MatrixXd C = sigma - SZt * Pm * SZt.transpose();
    out.push_back(0.5 * (C + C.transpose()));
  }
  return out;
}

Calibration calibrate(const LongitudinalPanel& panel, const MvLmmParams& params) {
  Calibration cal;
  cal.gamma_hat = eb_posterior_means(panel, params);
  cal.error_cov = calibration_covariance(panel, params);
  const int P = panel.P();
  const int J = panel.J();
  const bool with_eta = panel.q() > 0 && params.eta.size() > 0;
  cal.x_hat.reserve(panel.subjects.size());
  for (std::size_t i = 0; i < panel.subjects.size(); ++i) {
    const auto& s = panel.subjects[i];
    const VectorXd& g = cal.gamma_hat[i];
    MatrixXd x(P, J);
    for (int p = 0; p < P; ++p) {
      const double shift = with_eta ? params.eta.row(p).dot(s.covariates) : 0.0;
      for (int j = 0; j < J; ++j) {
        const double t = panel.grid[j];
        x(p, j) = trajectory(params.beta, p, t) + shift + g(2 * p) + g(2 * p + 1) * t;
      }
    }
    cal.x_hat.push_back(std::move(x));
  }
  return cal;
}

}  // namespace jmcal
