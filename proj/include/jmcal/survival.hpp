#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "jmcal/model.hpp"
#include "jmcal/optim.hpp"

namespace jmcal {

enum class HazardMode {
  Naive,        // Phi(alpha0 + zeta'z + alpha'x)
  Corrected,    // denominator sqrt(1 + alpha' W alpha) moves with alpha
  FrozenOmega,  // denominator uses a fixed omega, iterated to a fixed point
};

// One row per subject-interval at risk. Interval k (0-based) ends at grid
// index k+1 and uses covariates lagged to grid index k.
struct HazardData {
  int P = 0;
  int q = 0;
  int intervals = 0;  // J - 1
  std::vector<int> interval;
  std::vector<int> subject;
  std::vector<char> event;
  MatrixXd x;  // rows x P
  MatrixXd z;  // rows x q
  // rows x P*P, W_pq = (1, t) C_pq (1, t)' with C = Var(gamma_hat - gamma);
  // empty when no calibration variance is attached.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w;

  int rows() const { return static_cast<int>(interval.size()); }
};

// `trajectories[i]` holds marker values for subject i at grid indices
// 0..visits-1 (extra columns are ignored). Missing cells are carried
// forward from the previous visit. `error_cov`, when given, attaches the
// calibration variance of every row.
HazardData build_hazard_data(const LongitudinalPanel& panel, const std::vector<MatrixXd>& trajectories,
                             const std::vector<MatrixXd>* error_cov = nullptr);

// Phi((alpha0 + zeta'z + alpha'x) / sqrt(1 + v)).
double hazard(const SurvivalParams& params, int interval, const VectorXd& x, const VectorXd& z, double v);

// Scalar calibration variance R' C R for one lag time.
double calibration_variance(const MatrixXd& error_cov, const VectorXd& omega, double t);

struct SurvivalFitOptions {
  HazardMode mode = HazardMode::Naive;
  OptimOptions optim;
  std::optional<VectorXd> omega;  // FrozenOmega start value; naive fit when absent
  int max_fixed_point = 50;
  double separation_bound = 25.0;
};

struct SurvivalFit {
  SurvivalParams params;
  double loglik = 0.0;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
};

// Log-likelihood; in FrozenOmega mode `omega` supplies the denominator.
double survival_loglik(const SurvivalParams& params, const HazardData& data, const TieMap& tie, HazardMode mode,
                       const VectorXd* omega = nullptr);

// Packed parameters [alpha0 groups; alpha; zeta] and the matching gradient.
VectorXd pack_survival(const SurvivalParams& params, const TieMap& tie);
SurvivalParams unpack_survival(const VectorXd& theta, const TieMap& tie, int P, int q);
double survival_loglik_packed(const VectorXd& theta, const HazardData& data, const TieMap& tie, HazardMode mode,
                              const VectorXd* omega, VectorXd* grad);

SurvivalFit fit_survival(const HazardData& data, const TieMap& tie, const SurvivalFitOptions& opts = {});

}  // namespace jmcal
