#include "jmcal/pairwise.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "jmcal/error.hpp"
#include "jmcal/parallel.hpp"

namespace jmcal {

std::map<ParamKey, double> average_duplicates(const std::vector<TaggedEstimate>& estimates,
                                              const std::vector<ParamKey>& required) {
  std::map<ParamKey, std::pair<double, int>> acc;
  for (const auto& e : estimates) {
    auto& slot = acc[e.key];
    slot.first += e.value;
    slot.second += 1;
  }
  for (const auto& k : required) {
    if (acc.find(k) == acc.end()) {
      throw Error(ErrorKind::MissingCoverage, "no pairwise estimate for parameter (kind " +
                                                  std::to_string(static_cast<int>(k.kind)) + ", block " +
                                                  std::to_string(k.block) + ", " + std::to_string(k.i) + ", " +
                                                  std::to_string(k.j) + ")");
    }
  }
  std::map<ParamKey, double> out;
  for (const auto& [k, v] : acc) out.emplace(k, v.first / v.second);
  return out;
}

bool PairwiseDiagnostics::all_converged() const {
  return std::all_of(fits.begin(), fits.end(), [](const PairFitRecord& r) { return r.converged; });
}

std::vector<std::vector<int>> marker_subsets(int P) {
  if (P == 1) return {{0}};
  std::vector<std::vector<int>> out;
  for (int a = 0; a < P; ++a) {
    for (int b = a + 1; b < P; ++b) out.push_back({a, b});
  }
  return out;
}

int min_stratum_size(int P) { return std::max(3, 2 * P); }

MatrixXd project_psd(const MatrixXd& m, bool* repaired) {
  if (repaired) *repaired = false;
  if (m.size() == 0) return m;
  const MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  const double scale = std::max(sym.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if (es.eigenvalues().minCoeff() >= -1e-12 * scale) return m;
  if (repaired) *repaired = true;
  const VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  const MatrixXd out = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

namespace {

double stratum_position(int stratum, const TimeGrid& grid) {
  const int J = grid.size();
  if (stratum < J) return grid[stratum];
  return grid[J - 1] + (grid[J - 1] - grid[J - 2]);
}

// Mean-structure levels of one fitting group. Every stratum has its own
// intercept; strata with at least two visits have their own slope and
// single-visit strata borrow the slope of the earliest such stratum.
struct MeanLayout {
  std::vector<int> strata;  // empty: one level for everybody
  std::map<int, int> int_level;
  std::map<int, int> slope_level;
  int n_int = 1;
  int n_slope = 1;

  int intercept_of(int stratum) const { return strata.empty() ? 0 : int_level.at(stratum); }
  int slope_of(int stratum) const { return strata.empty() ? 0 : slope_level.at(stratum); }
};

MeanLayout make_layout(const std::vector<int>& strata) {
  MeanLayout l;
  l.strata = strata;
  l.n_int = static_cast<int>(strata.size());
  l.n_slope = 0;
  int first_slope = -1;
  for (std::size_t k = 0; k < strata.size(); ++k) {
    l.int_level[strata[k]] = static_cast<int>(k);
    if (strata[k] >= 2) {
      if (first_slope < 0) first_slope = l.n_slope;
      l.slope_level[strata[k]] = l.n_slope++;
    }
  }
  if (first_slope < 0) throw Error(ErrorKind::ThinStratum, "stratum group has no subject with two visits");
  for (int s : strata) {
    if (s < 2) l.slope_level[s] = first_slope;
  }
  return l;
}

struct SubsetProblem {
  LmmProblem problem;
  std::vector<int> markers;
  int per_marker = 0;
  int n_cov = 0;
  std::vector<int> random_global;
};

// Bivariate (or univariate) model for `markers` over `subjects`. Fixed
// columns per marker are [intercept levels, slope levels], followed by q
// covariate columns per marker; with `fixed_zeta` the covariate effect is
// subtracted from y and no covariate columns are added.
SubsetProblem build_subset(const LongitudinalPanel& panel, const std::vector<int>& subjects,
                           const std::vector<int>& markers, const RandomEffectsStructure& structure,
                           const MeanLayout& layout, const MatrixXd* fixed_zeta) {
  SubsetProblem sp;
  sp.markers = markers;
  const int nm = static_cast<int>(markers.size());
  const int q = panel.q();
  sp.per_marker = layout.n_int + layout.n_slope;
  sp.n_cov = fixed_zeta ? 0 : q;
  const int k = nm * sp.per_marker + nm * sp.n_cov;

  std::vector<int> random_of_marker_int(static_cast<std::size_t>(nm)), random_of_marker_slope(static_cast<std::size_t>(nm), -1);
  for (int l = 0; l < nm; ++l) {
    const int m = markers[static_cast<std::size_t>(l)];
    random_of_marker_int[static_cast<std::size_t>(l)] = static_cast<int>(sp.random_global.size());
    sp.random_global.push_back(2 * m);
    sp.problem.random_group.push_back(l);
    if (structure.has_slope(m)) {
      random_of_marker_slope[static_cast<std::size_t>(l)] = static_cast<int>(sp.random_global.size());
      sp.random_global.push_back(2 * m + 1);
      sp.problem.random_group.push_back(l);
    }
  }
  const int r = static_cast<int>(sp.random_global.size());
  sp.problem.n_fixed = k;
  sp.problem.n_random = r;
  sp.problem.n_residual = nm;

  for (int i : subjects) {
    const auto& s = panel.subjects[static_cast<std::size_t>(i)];
    const int stratum = stratum_of(s);
    int n = 0;
    for (int m : markers) {
      for (int j = 0; j < s.visits; ++j) n += std::isnan(s.markers(m, j)) ? 0 : 1;
    }
    if (n == 0) continue;
    LmmBlock b;
    b.y.resize(n);
    b.fixed = MatrixXd::Zero(n, k);
    b.random = MatrixXd::Zero(n, r);
    b.residual.reserve(static_cast<std::size_t>(n));
    const int il = layout.intercept_of(stratum);
    const int sl = layout.slope_of(stratum);
    int row = 0;
    for (int l = 0; l < nm; ++l) {
      const int m = markers[static_cast<std::size_t>(l)];
      const double shift = fixed_zeta && q > 0 ? fixed_zeta->row(m).dot(s.covariates) : 0.0;
      for (int j = 0; j < s.visits; ++j) {
        const double v = s.markers(m, j);
        if (std::isnan(v)) continue;
        const double t = panel.grid[j];
        b.y(row) = v - shift;
        b.fixed(row, l * sp.per_marker + il) = 1.0;
        b.fixed(row, l * sp.per_marker + layout.n_int + sl) = t;
        for (int c = 0; c < sp.n_cov; ++c) b.fixed(row, nm * sp.per_marker + l * sp.n_cov + c) = s.covariates(c);
        b.random(row, random_of_marker_int[static_cast<std::size_t>(l)]) = 1.0;
        const int rs = random_of_marker_slope[static_cast<std::size_t>(l)];
        if (rs >= 0) b.random(row, rs) = t;
        b.residual.push_back(l);
        ++row;
      }
    }
    sp.problem.blocks.push_back(std::move(b));
  }
  return sp;
}

// Emits tagged estimates of one subset fit. Stratum-specific fixed effects
// are keyed by stratum; shared quantities by the group's first stratum.
void tag_estimates(const SubsetProblem& sp, const LmmFit& fit, const MeanLayout& layout, int shared_block,
                   std::vector<TaggedEstimate>& out, std::vector<TaggedEstimate>* cov_variances) {
  const int nm = static_cast<int>(sp.markers.size());
  const LmmEstimate& e = fit.estimate;
  const std::vector<int> blocks = layout.strata.empty() ? std::vector<int>{0} : layout.strata;
  for (int l = 0; l < nm; ++l) {
    const int m = sp.markers[static_cast<std::size_t>(l)];
    for (int s : blocks) {
      const int block = layout.strata.empty() ? 0 : s;
      out.push_back({{ParamKind::Beta, block, 2 * m, 0}, e.beta(l * sp.per_marker + layout.intercept_of(s))});
      out.push_back({{ParamKind::Beta, block, 2 * m + 1, 0},
                     e.beta(l * sp.per_marker + layout.n_int + layout.slope_of(s))});
    }
    out.push_back({{ParamKind::SigmaEps, shared_block, m, 0}, e.resid(l)});
    for (int c = 0; c < sp.n_cov; ++c) {
      const int col = nm * sp.per_marker + l * sp.n_cov + c;
      out.push_back({{ParamKind::Eta, shared_block, m, c}, e.beta(col)});
      if (cov_variances) cov_variances->push_back({{ParamKind::Eta, shared_block, m, c}, fit.fixed_cov(col, col)});
    }
  }
  const int r = static_cast<int>(sp.random_global.size());
  for (int a = 0; a < r; ++a) {
    for (int b = a; b < r; ++b) {
      int gi = sp.random_global[static_cast<std::size_t>(a)];
      int gj = sp.random_global[static_cast<std::size_t>(b)];
      if (gi > gj) std::swap(gi, gj);
      out.push_back({{ParamKind::SigmaGamma, shared_block, gi, gj}, e.sigma(a, b)});
    }
  }
}

std::vector<int> active_effects(int P, const RandomEffectsStructure& structure) {
  std::vector<int> idx;
  for (int m = 0; m < P; ++m) {
    idx.push_back(2 * m);
    if (structure.has_slope(m)) idx.push_back(2 * m + 1);
  }
  return idx;
}

std::vector<ParamKey> required_keys(int P, int q, const RandomEffectsStructure& structure,
                                    const std::vector<int>& beta_blocks, int shared_block, bool with_eta) {
  std::vector<ParamKey> keys;
  for (int block : beta_blocks) {
    for (int i = 0; i < 2 * P; ++i) keys.push_back({ParamKind::Beta, block, i, 0});
  }
  for (int m = 0; m < P; ++m) keys.push_back({ParamKind::SigmaEps, shared_block, m, 0});
  if (with_eta) {
    for (int m = 0; m < P; ++m) {
      for (int c = 0; c < q; ++c) keys.push_back({ParamKind::Eta, shared_block, m, c});
    }
  }
  const auto act = active_effects(P, structure);
  for (std::size_t a = 0; a < act.size(); ++a) {
    for (std::size_t b = a; b < act.size(); ++b) keys.push_back({ParamKind::SigmaGamma, shared_block, act[a], act[b]});
  }
  return keys;
}

MatrixXd assemble_sigma(const std::map<ParamKey, double>& avg, int P, int block, const RandomEffectsStructure& structure,
                        bool* repaired) {
  const auto act = active_effects(P, structure);
  const auto n = static_cast<Eigen::Index>(act.size());
  MatrixXd sub(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a; b < n; ++b) {
      const double v = avg.at({ParamKind::SigmaGamma, block, act[static_cast<std::size_t>(a)], act[static_cast<std::size_t>(b)]});
      sub(a, b) = v;
      sub(b, a) = v;
    }
  }
  sub = project_psd(sub, repaired);
  MatrixXd full = MatrixXd::Zero(2 * P, 2 * P);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) full(act[static_cast<std::size_t>(a)], act[static_cast<std::size_t>(b)]) = sub(a, b);
  }
  return full;
}

struct Task {
  std::size_t group = 0;
  std::vector<int> markers;
};

struct GroupFits {
  std::vector<TaggedEstimate> estimates;
  std::vector<TaggedEstimate> cov_variances;
};

std::string subset_label(const std::vector<int>& markers, const std::vector<int>& strata) {
  std::string s = "markers (";
  for (std::size_t k = 0; k < markers.size(); ++k) s += (k ? "," : "") + std::to_string(markers[k]);
  s += ")";
  if (!strata.empty()) {
    s += " strata (";
    for (std::size_t k = 0; k < strata.size(); ++k) s += (k ? "," : "") + std::to_string(strata[k]);
    s += ")";
  }
  return s;
}

// Fits every (group, marker subset) task and collects tagged estimates per
// group in task order.
std::vector<GroupFits> run_tasks(const LongitudinalPanel& panel, const std::vector<std::vector<int>>& group_subjects,
                                 const std::vector<MeanLayout>& layouts, const std::vector<int>& shared_blocks,
                                 const PairwiseOptions& opts, const MatrixXd* fixed_zeta, PairwiseDiagnostics* diag) {
  std::vector<Task> tasks;
  for (std::size_t g = 0; g < group_subjects.size(); ++g) {
    for (auto& m : marker_subsets(panel.P())) tasks.push_back({g, m});
  }
  std::vector<SubsetProblem> problems(tasks.size());
  std::vector<LmmFit> fits(tasks.size());
  parallel_for(tasks.size(), opts.threads, [&](std::size_t t) {
    const Task& task = tasks[t];
    const MeanLayout& layout = layouts[task.group];
    try {
      problems[t] = build_subset(panel, group_subjects[task.group], task.markers, opts.structure, layout, fixed_zeta);
      fits[t] = fit_lmm(problems[t].problem, std::nullopt, opts.lmm);
    } catch (const Error& e) {
      throw Error(e.kind(), subset_label(task.markers, layout.strata) + ": " + e.what());
    }
  });

  std::vector<GroupFits> out(group_subjects.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const Task& task = tasks[t];
    tag_estimates(problems[t], fits[t], layouts[task.group], shared_blocks[task.group], out[task.group].estimates,
                  &out[task.group].cov_variances);
    if (diag) {
      diag->fits.push_back(
          {task.markers, layouts[task.group].strata, fits[t].loglik, fits[t].converged, fits[t].iterations});
    }
  }
  return out;
}

void check_panel(const LongitudinalPanel& panel) {
  if (panel.P() < 1) throw Error(ErrorKind::InvalidArgument, "panel has no markers");
  if (panel.J() < 2) throw Error(ErrorKind::InvalidArgument, "panel grid needs at least two times");
}

}  // namespace

std::vector<std::vector<int>> stratum_groups(const LongitudinalPanel& panel, const RandomEffectsStructure& structure,
                                             bool pool) {
  check_panel(panel);
  std::map<int, int> counts;
  for (const auto& s : panel.subjects) counts[stratum_of(s)] += 1;
  std::vector<std::vector<int>> groups;
  for (const auto& [stratum, n] : counts) groups.push_back({stratum});

  const int need_size = min_stratum_size(panel.P());
  const int need_visits = structure.any_slope(panel.P()) ? 3 : 2;
  const auto thin = [&](const std::vector<int>& g) {
    int n = 0;
    for (int s : g) n += counts[s];
    // Strata are visit counts, so the last member has the longest follow-up.
    return n < need_size || g.back() < need_visits;
  };
  const TimeGrid& grid = panel.grid;
  for (;;) {
    auto it = std::find_if(groups.begin(), groups.end(), thin);
    if (it == groups.end()) break;
    const auto g = static_cast<std::size_t>(it - groups.begin());
    const std::string label = stratum_label(groups[g].front(), grid);
    if (!pool) throw Error(ErrorKind::ThinStratum, "stratum " + label + " is too thin to fit on its own");
    if (groups.size() == 1) throw Error(ErrorKind::ThinStratum, "too few subjects to fit any stratum group");
    std::size_t target;
    if (g == 0) {
      target = 1;
    } else if (g + 1 == groups.size() || is_censored_stratum(groups[g].back(), grid)) {
      target = g - 1;
    } else {
      const double left = stratum_position(groups[g].front(), grid) - stratum_position(groups[g - 1].back(), grid);
      const double right = stratum_position(groups[g + 1].front(), grid) - stratum_position(groups[g].back(), grid);
      target = left <= right ? g - 1 : g + 1;
    }
    const std::size_t lo = std::min(g, target);
    groups[lo].insert(groups[lo].end(), groups[lo + 1].begin(), groups[lo + 1].end());
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(lo + 1));
  }
  return groups;
}

MvLmmParams fit_pairwise_marginal(const LongitudinalPanel& panel, const PairwiseOptions& opts,
                                  PairwiseDiagnostics* diag) {
  check_panel(panel);
  const int P = panel.P();
  const int q = panel.q();
  std::vector<int> all(panel.subjects.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);

  const std::vector<GroupFits> fits = run_tasks(panel, {all}, {MeanLayout{}}, {0}, opts, nullptr, diag);
  const auto avg = average_duplicates(fits[0].estimates, required_keys(P, q, opts.structure, {0}, 0, q > 0));

  MvLmmParams out;
  out.beta.resize(2 * P);
  for (int i = 0; i < 2 * P; ++i) out.beta(i) = avg.at({ParamKind::Beta, 0, i, 0});
  out.sigma_eps2.resize(P);
  for (int m = 0; m < P; ++m) out.sigma_eps2(m) = avg.at({ParamKind::SigmaEps, 0, m, 0});
  out.eta = MatrixXd::Zero(P, q);
  for (int m = 0; m < P; ++m) {
    for (int c = 0; c < q; ++c) out.eta(m, c) = avg.at({ParamKind::Eta, 0, m, c});
  }
  bool repaired = false;
  out.sigma_gamma = assemble_sigma(avg, P, 0, opts.structure, &repaired);
  if (diag) diag->psd_repaired = diag->psd_repaired || repaired;
  return out;
}

ConditionalMvLmmParams fit_pairwise_conditional(const LongitudinalPanel& panel, const PairwiseOptions& opts,
                                                PairwiseDiagnostics* diag) {
  const int P = panel.P();
  const int q = panel.q();
  const auto groups = stratum_groups(panel, opts.structure, opts.pool_thin_strata);

  std::vector<std::vector<int>> group_subjects(groups.size());
  std::vector<MeanLayout> layouts;
  std::vector<int> shared;
  std::map<int, std::size_t> group_of;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    layouts.push_back(make_layout(groups[g]));
    shared.push_back(groups[g].front());
    for (int s : groups[g]) group_of[s] = g;
  }
  for (std::size_t i = 0; i < panel.subjects.size(); ++i) {
    group_subjects[group_of.at(stratum_of(panel.subjects[i]))].push_back(static_cast<int>(i));
  }

  std::vector<GroupFits> fits = run_tasks(panel, group_subjects, layouts, shared, opts, nullptr, diag);

  // Shared covariate effects: precision-weighted mean of the per-group
  // estimates, then a second pass with the covariate part held fixed.
  std::optional<MatrixXd> common_zeta;
  if (opts.constrain_covariates && q > 0) {
    MatrixXd num = MatrixXd::Zero(P, q), den = MatrixXd::Zero(P, q), plain = MatrixXd::Zero(P, q);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto est = average_duplicates(fits[g].estimates, {});
      const auto var = average_duplicates(fits[g].cov_variances, {});
      for (int m = 0; m < P; ++m) {
        for (int c = 0; c < q; ++c) {
          const ParamKey key{ParamKind::Eta, shared[g], m, c};
          const double v = var.at(key);
          plain(m, c) += est.at(key) / static_cast<double>(groups.size());
          if (std::isfinite(v) && v > 0) {
            num(m, c) += est.at(key) / v;
            den(m, c) += 1.0 / v;
          }
        }
      }
    }
    common_zeta = MatrixXd(P, q);
    for (int m = 0; m < P; ++m) {
      for (int c = 0; c < q; ++c) (*common_zeta)(m, c) = den(m, c) > 0 ? num(m, c) / den(m, c) : plain(m, c);
    }
    if (diag) diag->fits.clear();
    fits = run_tasks(panel, group_subjects, layouts, shared, opts, &*common_zeta, diag);
  }

  ConditionalMvLmmParams out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const bool with_eta = q > 0 && !common_zeta;
    const auto avg =
        average_duplicates(fits[g].estimates, required_keys(P, q, opts.structure, groups[g], shared[g], with_eta));
    bool repaired = false;
    const MatrixXd sigma = assemble_sigma(avg, P, shared[g], opts.structure, &repaired);
    if (diag) diag->psd_repaired = diag->psd_repaired || repaired;
    VectorXd eps(P);
    for (int m = 0; m < P; ++m) eps(m) = avg.at({ParamKind::SigmaEps, shared[g], m, 0});
    MatrixXd zeta = MatrixXd::Zero(P, q);
    if (common_zeta) {
      zeta = *common_zeta;
    } else {
      for (int m = 0; m < P; ++m) {
        for (int c = 0; c < q; ++c) zeta(m, c) = avg.at({ParamKind::Eta, shared[g], m, c});
      }
    }
    for (int s : groups[g]) {
      StratumParams sp;
      sp.beta_star.resize(2 * P);
      for (int i = 0; i < 2 * P; ++i) sp.beta_star(i) = avg.at({ParamKind::Beta, s, i, 0});
      sp.sigma_gamma_star = sigma;
      sp.sigma_eps2_star = eps;
      sp.zeta_star = zeta;
      out.strata.emplace(s, std::move(sp));
      out.pooled_with[s] = shared[g];
    }
  }
  return out;
}

}  // namespace jmcal
