#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "jmcal/model.hpp"
#include "jmcal/simgen.hpp"

namespace jmcal::test {

inline SubjectRecord subject(const std::string& id, int visits, bool event, const MatrixXd& markers,
                             VectorXd covariates = VectorXd()) {
  SubjectRecord s;
  s.id = id;
  s.visits = visits;
  s.event = event;
  s.markers = markers;
  s.covariates = covariates;
  return s;
}

inline LongitudinalPanel empty_panel(std::vector<double> grid, int P, int q = 0) {
  LongitudinalPanel p;
  p.grid.times = std::move(grid);
  for (int m = 0; m < P; ++m) p.marker_names.push_back("m" + std::to_string(m + 1));
  for (int c = 0; c < q; ++c) p.covariate_names.push_back("z" + std::to_string(c + 1));
  return p;
}

// Reference three-marker panel of I subjects.
inline GeneratedPanel reference_panel(int I, std::uint64_t seed) {
  return generate_panel(table1_truth(), I, seed);
}

inline MatrixXd random_spd(int n, std::mt19937_64& rng, double ridge = 0.1) {
  std::normal_distribution<double> N;
  MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = N(rng);
  return A * A.transpose() / n + ridge * MatrixXd::Identity(n, n);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace jmcal::test
