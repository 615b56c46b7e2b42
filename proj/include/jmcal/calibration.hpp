#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jmcal/model.hpp"
#include "jmcal/pairwise.hpp"
#include "jmcal/survival.hpp"

namespace jmcal {

// Complete-follow-up panel drawn from the stratum-conditional model: every
// subject gets J visits simulated from its stratum's mean lines, random
// effects and residuals. Observed cells are not retained.
LongitudinalPanel simulate_pseudo_complete(const ConditionalMvLmmParams& cond, const LongitudinalPanel& panel,
                                           std::uint64_t seed, std::uint64_t replicate = 0);

struct CalibrationOptions {
  int M = 10;
  PairwiseOptions pairwise;
  std::optional<TieMap> tie;  // distinct intercepts when absent
  SurvivalFitOptions survival{HazardMode::Corrected, {}, std::nullopt, 50, 25.0};
  std::uint64_t seed = 1;
  int threads = 1;
};

struct ReplicateResult {
  int replicate = 0;
  bool ok = false;
  std::string error;
  SurvivalParams survival;
  MvLmmParams longitudinal;
  double loglik = 0.0;
  bool survival_converged = false;
  bool lmm_converged = false;
  bool separation = false;
  bool psd_repaired = false;
};

struct CalibrationResult {
  SurvivalParams survival;
  MvLmmParams longitudinal;
  ConditionalMvLmmParams conditional;
  PairwiseDiagnostics conditional_diagnostics;
  std::vector<ReplicateResult> replicates;
  int failures = 0;
  bool converged = false;
  bool separation = false;
};

// Steps 2-5 for one replicate, given the fitted stratum-conditional model.
ReplicateResult run_replicate(const LongitudinalPanel& panel, const ConditionalMvLmmParams& cond,
                              const CalibrationOptions& opts, int replicate);

// Full pipeline: conditional pairwise fit, M replicates of pseudo-data
// imputation, marginal refit, empirical-Bayes calibration and corrected
// survival fit, then averages over successful replicates. More than M/2
// failed replicates raise TooManyFailures.
CalibrationResult run_calibration(const LongitudinalPanel& panel, const CalibrationOptions& opts = {});

void to_json(nlohmann::json& j, const CalibrationResult& r);

}  // namespace jmcal
