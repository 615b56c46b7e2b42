#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jmcal/calibration.hpp"

namespace jmcal {

// Flat, named view of a pipeline result: alpha0_k per hazard interval,
// alpha_<marker>, zeta_<covariate>, beta0_/beta1_<marker>,
// sigma2_b0_/sigma2_b1_<marker>, sigma2_eps_<marker>, eta_<marker>_<covariate>.
std::vector<std::pair<std::string, double>> named_estimates(const CalibrationResult& result,
                                                            const LongitudinalPanel& panel);

// Empirical quantile at probability p of sorted values: rank p (n + 1),
// linear between neighbouring order statistics, clamped to the extremes.
double percentile(const std::vector<double>& sorted, double p);

struct BootstrapOptions {
  int B = 200;
  std::vector<double> levels{0.95};
  std::uint64_t seed = 1;
  int threads = 1;
  double max_failure_fraction = 0.10;
};

struct BootstrapInterval {
  double level = 0.95;
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapParameter {
  std::string name;
  double estimate = 0.0;  // on the original panel
  double se = 0.0;        // SD over successful resamples
  double median = 0.0;
  std::vector<BootstrapInterval> intervals;
};

struct BootstrapResult {
  std::vector<BootstrapParameter> parameters;
  MatrixXd draws;  // B x parameters, NaN rows for failed resamples
  int failures = 0;
  std::vector<std::string> errors;
  CalibrationResult point;

  const BootstrapParameter& get(const std::string& name) const;
};

// Resamples subjects with replacement B times and reruns the whole pipeline
// on each resample (stratum pooling is re-derived per resample). Every run
// uses the pipeline seed in `config`, so the only variation between
// resamples is the resampling itself. More than max_failure_fraction failed
// resamples raise TooManyFailures.
BootstrapResult bootstrap_ci(const LongitudinalPanel& panel, const CalibrationOptions& config,
                             const BootstrapOptions& opts = {});

void to_json(nlohmann::json& j, const BootstrapResult& r);

}  // namespace jmcal
