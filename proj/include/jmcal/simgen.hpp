#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jmcal/calibration.hpp"
#include "jmcal/model.hpp"

namespace jmcal {

// Parameters of the data-generating joint model. Covariates, when
// `covariate_names` is non-empty, are drawn i.i.d. N(0, 1) per subject and
// enter the markers through longitudinal.eta and the hazard through
// survival.zeta.
struct TruthParams {
  MvLmmParams longitudinal;
  SurvivalParams survival;  // alpha0 has J - 1 entries
  TimeGrid grid;
  std::vector<std::string> marker_names;
  std::vector<std::string> covariate_names;

  int P() const { return longitudinal.P(); }
  int J() const { return grid.size(); }
};

// Three markers with the intercepts, slopes and association parameters of
// the reference simulation design: five visits at t = 0, 1, 2, 3, 4 (or at
// t = 1..5 with `grid_from_one`), residual standard deviation 0.75
// (`residual_variance_075` reads 0.75 as the variance instead).
TruthParams table1_truth(bool residual_variance_075 = false, bool grid_from_one = false);

// Single-marker variant (beta = (1, 0), alpha = 0.4) on the same grid, used
// by the quadrature comparison.
TruthParams single_marker_truth(bool grid_from_one = false);

struct GeneratedPanel {
  LongitudinalPanel panel;
  std::vector<MatrixXd> x_true;  // P x J error-free trajectories
  std::vector<VectorXd> gamma;   // 2P random effects
};

// Draws I subjects: random effects, true and observed markers, then the
// event process interval by interval using the lagged true markers.
// Subjects alive at the last grid time are censored there.
GeneratedPanel generate_panel(const TruthParams& truth, int I, std::uint64_t seed, std::uint64_t replicate = 0);

enum class Estimator { Truth, Observed, Proposed };
std::string estimator_name(Estimator e);

struct StudyOptions {
  int I = 300;
  int replicates = 100;
  std::vector<Estimator> estimators{Estimator::Truth, Estimator::Observed, Estimator::Proposed};
  CalibrationOptions calibration;
  TieMap tie;  // empty means all intercepts tied
  std::uint64_t seed = 1;
  int threads = 1;
};

struct EstimatorSummary {
  Estimator estimator = Estimator::Truth;
  std::vector<std::string> names;
  VectorXd truth;
  VectorXd mean, sd, rmse;
  MatrixXd estimates;  // replicates x parameters, NaN rows for failures
  int failures = 0;
  std::vector<std::string> errors;

  int index_of(const std::string& name) const;
};

struct StudyReport {
  std::vector<EstimatorSummary> estimators;

  const EstimatorSummary& get(Estimator e) const;
};

// Naive fit of the survival model on known trajectories (true or observed).
SurvivalFit fit_naive(const LongitudinalPanel& panel, const std::vector<MatrixXd>& trajectories, const TieMap& tie);

StudyReport run_study(const TruthParams& truth, const StudyOptions& opts);

void to_json(nlohmann::json& j, const TruthParams& t);
void from_json(const nlohmann::json& j, TruthParams& t);
void to_json(nlohmann::json& j, const StudyReport& r);

}  // namespace jmcal
