#pragma once

// Synthetic liver-cohort panel: bilirubin, albumin and prothrombin time on a
// log scale, visits at 0, 0.5, 1, 2, 3, 4 years, age as a baseline covariate.
// Higher bilirubin and prothrombin and lower albumin raise the hazard.

#include <cmath>
#include <fstream>
#include <string>

#include "jmcal/simgen.hpp"

namespace jmcal::test {

inline TruthParams pbc_like_truth() {
  TruthParams t;
  t.grid.times = {0, 0.5, 1, 2, 3, 4};
  t.marker_names = {"bilirubin", "albumin", "prothrombin"};
  t.covariate_names = {"age"};
  auto& l = t.longitudinal;
  l.beta.resize(6);
  l.beta << 0.5, 0.15, 1.25, -0.02, 2.4, 0.01;
  l.sigma_gamma = MatrixXd::Zero(6, 6);
  const double var[6] = {0.8, 0.04, 0.02, 0.001, 0.01, 0.0005};
  for (int k = 0; k < 6; ++k) l.sigma_gamma(k, k) = var[k];
  // Bilirubin and prothrombin intercepts move together, albumin against them.
  l.sigma_gamma(0, 4) = l.sigma_gamma(4, 0) = 0.3 * std::sqrt(0.8 * 0.01);
  l.sigma_gamma(0, 2) = l.sigma_gamma(2, 0) = -0.3 * std::sqrt(0.8 * 0.02);
  l.sigma_eps2.resize(3);
  l.sigma_eps2 << 0.1, 0.005, 0.003;
  l.eta = MatrixXd::Zero(3, 1);
  l.eta(0, 0) = 0.05;
  auto& s = t.survival;
  s.alpha.resize(3);
  s.alpha << 0.6, -3.0, 4.0;
  s.zeta = VectorXd::Constant(1, 0.2);
  const double centre = s.alpha.dot(Eigen::Vector3d(l.beta(0), l.beta(2), l.beta(4)));
  s.alpha0 = VectorXd::Constant(5, -1.9 - centre);
  return t;
}

// Writes raw-scale CSVs (exp of the simulated log values) so that loaders
// must apply the log transform.
inline void write_pbc_like(const std::string& long_path, const std::string& events_path, int I, std::uint64_t seed) {
  const auto g = generate_panel(pbc_like_truth(), I, seed);
  std::ofstream lf(long_path), ef(events_path);
  lf << "subject_id,time,marker,value\n";
  ef << "subject_id,last_visit_index,event_observed,age\n";
  lf.precision(17);
  ef.precision(17);
  for (const auto& s : g.panel.subjects) {
    ef << "pt" << s.id << ',' << s.visits << ',' << (s.event ? 1 : 0) << ',' << s.covariates(0) << '\n';
    for (int j = 0; j < s.visits; ++j) {
      for (int p = 0; p < 3; ++p) {
        lf << "pt" << s.id << ',' << g.panel.grid[j] << ',' << g.panel.marker_names[static_cast<std::size_t>(p)] << ',';
        // Every 25th prothrombin value is missing.
        if (p == 2 && j > 0 && (std::stoi(s.id) + j) % 25 == 0) {
          lf << "NA\n";
        } else {
          lf << std::exp(s.markers(p, j)) << '\n';
        }
      }
    }
  }
}

}  // namespace jmcal::test
