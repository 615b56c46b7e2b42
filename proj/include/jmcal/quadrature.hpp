#pragma once

#include <vector>

#include "jmcal/model.hpp"
#include "jmcal/optim.hpp"

namespace jmcal {

enum class QuadRule { GaussHermite, Trapezoid };

// Tensor-product rule over the random effects, centred and scaled per
// subject on the Gaussian posterior given its marker values.
// `radius` (in posterior SDs) only applies to the trapezoid rule.
struct QuadSpec {
  QuadRule rule = QuadRule::GaussHermite;
  int nodes = 40;
  double radius = 8.0;
};

// One-dimensional rule for E[f(u)], u ~ N(0, 1).
void normal_rule(const QuadSpec& spec, std::vector<double>& nodes, std::vector<double>& weights);

// Gauss-Hermite nodes and weights for the weight function exp(-x^2).
void gauss_hermite(int n, std::vector<double>& nodes, std::vector<double>& weights);

struct JointParamsP1 {
  MvLmmParams longitudinal;  // P = 1
  SurvivalParams survival;   // alpha0 has J - 1 entries
};

// Exact joint log-likelihood of the single-marker model, integrating the
// two random effects numerically for every subject.
double joint_loglik_p1(const JointParamsP1& params, const LongitudinalPanel& panel, const QuadSpec& spec = {},
                       int threads = 1);

struct JointMleOptions {
  QuadSpec quad;
  OptimOptions optim;
  TieMap tie;              // distinct intercepts when empty
  bool fix_alpha = false;  // hold alpha at its initial value
  int threads = 1;
  double fd_step = 1e-5;
};

struct JointMleFit {
  JointParamsP1 params;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Maximum-likelihood fit over (beta, log-Cholesky Sigma, log sigma2, eta,
// alpha0 groups, alpha, zeta) with a finite-difference gradient.
JointMleFit joint_mle_p1(const LongitudinalPanel& panel, const JointParamsP1& init, const JointMleOptions& opts = {});

void to_json(nlohmann::json& j, const JointParamsP1& p);

}  // namespace jmcal
