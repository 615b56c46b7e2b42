#include "jmcal/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "jmcal/error.hpp"
#include "jmcal/parallel.hpp"
#include "jmcal/rng.hpp"

namespace jmcal {

std::vector<std::pair<std::string, double>> named_estimates(const CalibrationResult& result,
                                                            const LongitudinalPanel& panel) {
  std::vector<std::pair<std::string, double>> out;
  const auto& s = result.survival;
  const auto& l = result.longitudinal;
  for (Eigen::Index k = 0; k < s.alpha0.size(); ++k) out.emplace_back("alpha0_" + std::to_string(k + 1), s.alpha0(k));
  for (int p = 0; p < panel.P(); ++p) out.emplace_back("alpha_" + panel.marker_names[static_cast<std::size_t>(p)], s.alpha(p));
  for (int c = 0; c < panel.q(); ++c) {
    out.emplace_back("zeta_" + panel.covariate_names[static_cast<std::size_t>(c)], s.zeta(c));
  }
  for (int p = 0; p < panel.P(); ++p) {
    const std::string& m = panel.marker_names[static_cast<std::size_t>(p)];
    out.emplace_back("beta0_" + m, l.beta(2 * p));
    out.emplace_back("beta1_" + m, l.beta(2 * p + 1));
    out.emplace_back("sigma2_b0_" + m, l.sigma_gamma(2 * p, 2 * p));
    out.emplace_back("sigma2_b1_" + m, l.sigma_gamma(2 * p + 1, 2 * p + 1));
    out.emplace_back("sigma2_eps_" + m, l.sigma_eps2(p));
    for (int c = 0; c < panel.q(); ++c) {
      out.emplace_back("eta_" + m + "_" + panel.covariate_names[static_cast<std::size_t>(c)], l.eta(p, c));
    }
  }
  return out;
}

double percentile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto n = static_cast<double>(sorted.size());
  const double h = p * (n + 1.0);
  if (h <= 1.0) return sorted.front();
  if (h >= n) return sorted.back();
  const double lo = std::floor(h);
  const auto i = static_cast<std::size_t>(lo) - 1;
  return sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i]);
}

const BootstrapParameter& BootstrapResult::get(const std::string& name) const {
  for (const auto& p : parameters) {
    if (p.name == name) return p;
  }
  throw Error(ErrorKind::InvalidArgument, "no bootstrap parameter named " + name);
}

BootstrapResult bootstrap_ci(const LongitudinalPanel& panel, const CalibrationOptions& config,
                             const BootstrapOptions& opts) {
  if (opts.B < 2) throw Error(ErrorKind::InvalidArgument, "the bootstrap needs B >= 2");
  for (double lv : opts.levels) {
    if (!(lv > 0.0 && lv < 1.0)) throw Error(ErrorKind::InvalidArgument, "interval levels must lie in (0, 1)");
  }
  BootstrapResult out;
  CalibrationOptions inner = config;
  inner.threads = opts.threads;
  out.point = run_calibration(panel, inner);
  const auto point = named_estimates(out.point, panel);
  const auto n_par = static_cast<Eigen::Index>(point.size());

  out.draws = MatrixXd::Constant(opts.B, n_par, std::numeric_limits<double>::quiet_NaN());
  out.errors.assign(static_cast<std::size_t>(opts.B), "");
  inner.threads = 1;
  const auto I = panel.subjects.size();
  parallel_for(static_cast<std::size_t>(opts.B), opts.threads, [&](std::size_t b) {
    auto gen = rng::stream(opts.seed, rng::Purpose::Resample, {b});
    std::uniform_int_distribution<std::size_t> pick(0, I - 1);
    LongitudinalPanel res;
    res.grid = panel.grid;
    res.marker_names = panel.marker_names;
    res.covariate_names = panel.covariate_names;
    res.subjects.reserve(I);
    for (std::size_t k = 0; k < I; ++k) {
      SubjectRecord s = panel.subjects[pick(gen)];
      s.id += "." + std::to_string(k + 1);
      res.subjects.push_back(std::move(s));
    }
    try {
      const auto est = named_estimates(run_calibration(res, inner), res);
      for (Eigen::Index c = 0; c < n_par; ++c) out.draws(static_cast<Eigen::Index>(b), c) = est[static_cast<std::size_t>(c)].second;
    } catch (const Error& e) {
      out.errors[b] = std::string(to_string(e.kind())) + ": " + e.what();
    }
  });

  for (Eigen::Index b = 0; b < out.draws.rows(); ++b) out.failures += out.draws.row(b).hasNaN() ? 1 : 0;
  if (out.failures > opts.max_failure_fraction * opts.B) {
    throw Error(ErrorKind::TooManyFailures,
                std::to_string(out.failures) + " of " + std::to_string(opts.B) + " bootstrap resamples failed");
  }

  for (Eigen::Index c = 0; c < n_par; ++c) {
    std::vector<double> v;
    for (Eigen::Index b = 0; b < out.draws.rows(); ++b) {
      if (!out.draws.row(b).hasNaN()) v.push_back(out.draws(b, c));
    }
    std::sort(v.begin(), v.end());
    BootstrapParameter p;
    p.name = point[static_cast<std::size_t>(c)].first;
    p.estimate = point[static_cast<std::size_t>(c)].second;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    p.se = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    p.median = percentile(v, 0.5);
    for (double lv : opts.levels) {
      const double tail = 0.5 * (1.0 - lv);
      p.intervals.push_back({lv, percentile(v, tail), percentile(v, 1.0 - tail)});
    }
    out.parameters.push_back(std::move(p));
  }
  return out;
}

void to_json(nlohmann::json& j, const BootstrapResult& r) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : r.parameters) {
    nlohmann::json iv = nlohmann::json::array();
    for (const auto& i : p.intervals) iv.push_back({{"level", i.level}, {"lower", i.lower}, {"upper", i.upper}});
    params.push_back(
        {{"name", p.name}, {"estimate", p.estimate}, {"se", p.se}, {"median", p.median}, {"intervals", iv}});
  }
  nlohmann::json errs = nlohmann::json::array();
  for (std::size_t b = 0; b < r.errors.size(); ++b) {
    if (!r.errors[b].empty()) errs.push_back({{"resample", b}, {"error", r.errors[b]}});
  }
  j = nlohmann::json{{"parameters", params},
                     {"resamples", r.draws.rows()},
                     {"failures", r.failures},
                     {"errors", errs},
                     {"point", r.point}};
}

}  // namespace jmcal
