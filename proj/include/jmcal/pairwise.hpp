#pragma once

#include <compare>
#include <map>
#include <utility>
#include <vector>

#include "jmcal/lmm.hpp"
#include "jmcal/model.hpp"

namespace jmcal {

// Identifies one global parameter that local pairwise estimates instantiate.
// `block` is the stratum for conditional fits and 0 for marginal fits;
// SigmaGamma keys use i <= j.
enum class ParamKind { Beta, SigmaGamma, SigmaEps, Eta };

struct ParamKey {
  ParamKind kind = ParamKind::Beta;
  int block = 0;
  int i = 0;
  int j = 0;

  auto operator<=>(const ParamKey&) const = default;
};

struct TaggedEstimate {
  ParamKey key;
  double value = 0.0;
};

// Unweighted mean per key. Every key in `required` must receive at least one
// estimate (MissingCoverage otherwise); estimates for other keys are kept.
std::map<ParamKey, double> average_duplicates(const std::vector<TaggedEstimate>& estimates,
                                              const std::vector<ParamKey>& required);

struct PairwiseOptions {
  RandomEffectsStructure structure;
  LmmFitOptions lmm;
  bool constrain_covariates = false;
  bool pool_thin_strata = true;
  int threads = 1;
};

struct PairFitRecord {
  std::vector<int> markers;
  std::vector<int> strata;  // empty for marginal fits
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
};

struct PairwiseDiagnostics {
  std::vector<PairFitRecord> fits;
  bool psd_repaired = false;

  bool all_converged() const;
};

// All marker subsets fitted by the pairwise strategy: C(P,2) pairs, or the
// single marker when P = 1.
std::vector<std::vector<int>> marker_subsets(int P);

// Minimum subjects per stratum group before pooling, max(3, 2P).
int min_stratum_size(int P);

// Partition of the observed strata into fitting groups, in time order. A
// group is thin when it has fewer than min_stratum_size(P) subjects or its
// longest follow-up cannot identify the random-effect structure; thin groups
// merge with the nearest group in time (ties and the censored stratum pool
// backward). With pool = false a thin group raises ThinStratum.
std::vector<std::vector<int>> stratum_groups(const LongitudinalPanel& panel, const RandomEffectsStructure& structure,
                                             bool pool);

MvLmmParams fit_pairwise_marginal(const LongitudinalPanel& panel, const PairwiseOptions& opts = {},
                                  PairwiseDiagnostics* diag = nullptr);

ConditionalMvLmmParams fit_pairwise_conditional(const LongitudinalPanel& panel, const PairwiseOptions& opts = {},
                                                PairwiseDiagnostics* diag = nullptr);

// Nearest PSD matrix by eigenvalue clipping; returns the input untouched when
// its smallest eigenvalue is above -tol * scale.
MatrixXd project_psd(const MatrixXd& m, bool* repaired = nullptr);

}  // namespace jmcal
