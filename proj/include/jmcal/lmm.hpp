#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "jmcal/model.hpp"
#include "jmcal/optim.hpp"

namespace jmcal {

// One subject's contribution to a linear mixed model fit:
//   y = F beta + Z gamma + e,  gamma ~ N(0, Sigma),  e_k ~ N(0, sigma2[residual[k]]).
struct LmmBlock {
  VectorXd y;
  MatrixXd fixed;              // n x k
  MatrixXd random;             // n x r
  std::vector<int> residual;   // n, index into the residual variances
};

struct LmmProblem {
  std::vector<LmmBlock> blocks;
  int n_fixed = 0;
  int n_random = 0;
  int n_residual = 0;
  // Residual group that each random-effect column belongs to; used for
  // start values only.
  std::vector<int> random_group;
};

struct LmmEstimate {
  VectorXd beta;
  MatrixXd sigma;   // r x r
  VectorXd resid;   // residual variances
};

struct LmmFitOptions {
  OptimOptions optim;
  bool fix_beta = false;    // hold beta at the start value
  bool fix_sigma = false;   // hold Sigma at the start value
  // A residual variance below floor * (sample variance of its observations)
  // raises SingularFit.
  double resid_floor = 1e-8;
};

struct LmmFit {
  LmmEstimate estimate;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  MatrixXd fixed_cov;  // (sum_i F_i' V_i^-1 F_i)^-1 at the estimate
};

// Negative marginal log-likelihood over the free parameters
//   theta = [beta; log-Cholesky(Sigma); log sigma2]
// with blocks sharing a design collapsed to sufficient statistics.
class LmmObjective {
 public:
  LmmObjective(const LmmProblem& problem, const LmmEstimate& base, bool fix_beta, bool fix_sigma);

  int dim() const;
  VectorXd pack(const LmmEstimate& est) const;
  LmmEstimate unpack(const VectorXd& theta) const;
  double operator()(const VectorXd& theta, VectorXd* grad) const;
  std::size_t patterns() const { return patterns_.size(); }

 private:
  struct Pattern {
    MatrixXd F, Z;
    std::vector<int> residual;
    double count = 0.0;
    VectorXd sum_y;
    MatrixXd sum_yy;
  };

  int k_, r_, m_;
  bool fix_beta_, fix_sigma_;
  LmmEstimate base_;
  std::vector<Pattern> patterns_;
};

double lmm_loglik(const LmmProblem& problem, const LmmEstimate& est);
LmmEstimate lmm_start_values(const LmmProblem& problem);
LmmFit fit_lmm(const LmmProblem& problem, const std::optional<LmmEstimate>& init,
               const LmmFitOptions& opts = {});

// Empirical-Bayes quantities for the full P-marker model on a panel.
// Row layout per subject is marker-major over observed cells; covariates
// enter the mean through eta.
struct Calibration {
  std::vector<VectorXd> gamma_hat;   // 2P per subject
  std::vector<MatrixXd> error_cov;   // Var(gamma_hat - gamma), 2P x 2P
  std::vector<MatrixXd> x_hat;       // reconstructed P x J true trajectories
};

// Sigma Z' V^-1 (x - mean).
std::vector<VectorXd> eb_posterior_means(const LongitudinalPanel& panel, const MvLmmParams& params);

// Sigma - Sigma Z' (V^-1 - V^-1 F Q F' V^-1) Z Sigma with Q = (sum F'V^-1F)^-1.
std::vector<MatrixXd> calibration_covariance(const LongitudinalPanel& panel, const MvLmmParams& params);

Calibration calibrate(const LongitudinalPanel& panel, const MvLmmParams& params);

}  // namespace jmcal
