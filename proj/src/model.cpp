#include "jmcal/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "jmcal/error.hpp"

namespace jmcal {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::SingularFit: return "SingularFit";
    case ErrorKind::SingularV: return "SingularV";
    case ErrorKind::SingularQ: return "SingularQ";
    case ErrorKind::ThinStratum: return "ThinStratum";
    case ErrorKind::MissingCoverage: return "MissingCoverage";
    case ErrorKind::Separation: return "Separation";
    case ErrorKind::QuadratureUnstable: return "QuadratureUnstable";
    case ErrorKind::TooManyFailures: return "TooManyFailures";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::ValidationFailed: return "ValidationFailed";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ParseError:
    case ErrorKind::GridMismatch:
    case ErrorKind::ValidationFailed:
    case ErrorKind::Io:
      return 2;
    default:
      return 1;
  }
}

std::vector<Violation> validate_panel(const LongitudinalPanel& panel) {
  std::vector<Violation> out;
  const auto& t = panel.grid.times;
  const int J = panel.J();
  if (J < 2) out.push_back({"", "time grid needs at least 2 points"});
  for (std::size_t j = 0; j < t.size(); ++j) {
    if (!std::isfinite(t[j])) out.push_back({"", "time grid contains a non-finite value"});
    if (j > 0 && !(t[j] > t[j - 1])) {
      out.push_back({"", "time grid must be strictly increasing (index " + std::to_string(j) + ")"});
    }
  }
  const int P = panel.P();
  if (P < 1) out.push_back({"", "panel needs at least one marker"});
  if (panel.subjects.empty()) out.push_back({"", "panel has no subjects"});

  std::set<std::string> seen;
  for (const auto& s : panel.subjects) {
    if (!seen.insert(s.id).second) out.push_back({s.id, "duplicate subject id"});
    if (s.visits < 1 || s.visits > J) {
      out.push_back({s.id, "visit count must lie in [1, J]"});
    } else if (s.event && s.visits == J) {
      out.push_back({s.id, "event at final grid time must be censored stratum"});
    } else if (!s.event && s.visits != J) {
      out.push_back({s.id, "censored subject must be followed to the last grid time"});
    }
    if (s.markers.rows() != P) out.push_back({s.id, "marker matrix must have P rows"});
    if (s.markers.cols() != s.visits) {
      out.push_back({s.id, "marker matrix must have one column per visit"});
    }
    for (Eigen::Index k = 0; k < s.markers.size(); ++k) {
      const double v = s.markers.data()[k];
      if (std::isinf(v)) {
        out.push_back({s.id, "marker values must be finite or missing"});
        break;
      }
    }
    if (s.covariates.size() != panel.q()) {
      out.push_back({s.id, "covariate vector must have q entries"});
    } else if (!s.covariates.allFinite()) {
      out.push_back({s.id, "covariates must be finite"});
    }
  }
  return out;
}

int stratum_of(const SubjectRecord& subject) { return subject.visits; }

bool is_censored_stratum(int stratum, const TimeGrid& grid) { return stratum == grid.size(); }

std::string stratum_label(int stratum, const TimeGrid& grid) {
  if (is_censored_stratum(stratum, grid)) return "censored";
  char buf[64];
  std::snprintf(buf, sizeof buf, "event@%g", grid[stratum]);
  return buf;
}

bool RandomEffectsStructure::any_slope(int P) const {
  for (int p = 0; p < P; ++p) {
    if (has_slope(p)) return true;
  }
  return false;
}

const StratumParams& ConditionalMvLmmParams::at(int stratum) const {
  auto it = strata.find(stratum);
  if (it == strata.end()) {
    throw Error(ErrorKind::MissingCoverage,
                "no conditional parameters for stratum " + std::to_string(stratum));
  }
  return it->second;
}

TieMap TieMap::distinct(int intervals) {
  TieMap t;
  t.group.resize(static_cast<std::size_t>(intervals));
  for (int k = 0; k < intervals; ++k) t.group[static_cast<std::size_t>(k)] = k;
  return t;
}

TieMap TieMap::tied(int intervals) {
  TieMap t;
  t.group.assign(static_cast<std::size_t>(intervals), 0);
  return t;
}

int TieMap::groups() const {
  if (group.empty()) return 0;
  return *std::max_element(group.begin(), group.end()) + 1;
}

bool TieMap::valid() const {
  if (group.empty()) return false;
  const int g = groups();
  std::vector<bool> used(static_cast<std::size_t>(g), false);
  for (int v : group) {
    if (v < 0) return false;
    used[static_cast<std::size_t>(v)] = true;
  }
  return std::all_of(used.begin(), used.end(), [](bool b) { return b; });
}

double trajectory(const VectorXd& beta, int marker, double t) {
  return beta(2 * marker) + beta(2 * marker + 1) * t;
}

namespace {

bool same_doubles(const double* a, const double* b, Eigen::Index n) {
  for (Eigen::Index k = 0; k < n; ++k) {
    const bool na = std::isnan(a[k]);
    const bool nb = std::isnan(b[k]);
    if (na != nb) return false;
    if (!na && a[k] != b[k]) return false;
  }
  return true;
}

}  // namespace

bool operator==(const SubjectRecord& a, const SubjectRecord& b) {
  return a.id == b.id && a.visits == b.visits && a.event == b.event &&
         a.markers.rows() == b.markers.rows() && a.markers.cols() == b.markers.cols() &&
         same_doubles(a.markers.data(), b.markers.data(), a.markers.size()) &&
         a.covariates.size() == b.covariates.size() &&
         same_doubles(a.covariates.data(), b.covariates.data(), a.covariates.size());
}

bool operator==(const LongitudinalPanel& a, const LongitudinalPanel& b) {
  return a.grid.times == b.grid.times && a.marker_names == b.marker_names &&
         a.covariate_names == b.covariate_names && a.subjects == b.subjects;
}

void to_json(nlohmann::json& j, const TimeGrid& g) { j = g.times; }
void from_json(const nlohmann::json& j, TimeGrid& g) { g.times = j.get<std::vector<double>>(); }

void to_json(nlohmann::json& j, const SubjectRecord& s) {
  j = {{"id", s.id}, {"visits", s.visits}, {"event", s.event},
       {"markers", s.markers}, {"covariates", s.covariates}};
}

void from_json(const nlohmann::json& j, SubjectRecord& s) {
  s.id = j.at("id").get<std::string>();
  s.visits = j.at("visits").get<int>();
  s.event = j.at("event").get<bool>();
  s.markers = j.at("markers").get<MatrixXd>();
  s.covariates = j.value("covariates", nlohmann::json::array()).get<VectorXd>();
}

void to_json(nlohmann::json& j, const LongitudinalPanel& p) {
  j = {{"grid", p.grid}, {"marker_names", p.marker_names},
       {"covariate_names", p.covariate_names}, {"subjects", p.subjects}};
}

void from_json(const nlohmann::json& j, LongitudinalPanel& p) {
  p.grid = j.at("grid").get<TimeGrid>();
  p.marker_names = j.at("marker_names").get<std::vector<std::string>>();
  p.covariate_names = j.value("covariate_names", std::vector<std::string>{});
  p.subjects = j.at("subjects").get<std::vector<SubjectRecord>>();
  // Empty JSON arrays carry no row count; restore it from P.
  for (auto& s : p.subjects) {
    if (s.markers.size() == 0) s.markers.resize(p.P(), s.markers.cols());
  }
}

void to_json(nlohmann::json& j, const MvLmmParams& p) {
  j = {{"beta", p.beta}, {"sigma_gamma", p.sigma_gamma},
       {"sigma_eps2", p.sigma_eps2}, {"eta", p.eta}};
}

void from_json(const nlohmann::json& j, MvLmmParams& p) {
  p.beta = j.at("beta").get<VectorXd>();
  p.sigma_gamma = j.at("sigma_gamma").get<MatrixXd>();
  p.sigma_eps2 = j.at("sigma_eps2").get<VectorXd>();
  p.eta = j.value("eta", nlohmann::json::array()).get<MatrixXd>();
}

void to_json(nlohmann::json& j, const StratumParams& p) {
  j = {{"beta_star", p.beta_star}, {"sigma_gamma_star", p.sigma_gamma_star},
       {"sigma_eps2_star", p.sigma_eps2_star}, {"zeta_star", p.zeta_star}};
}

void from_json(const nlohmann::json& j, StratumParams& p) {
  p.beta_star = j.at("beta_star").get<VectorXd>();
  p.sigma_gamma_star = j.at("sigma_gamma_star").get<MatrixXd>();
  p.sigma_eps2_star = j.at("sigma_eps2_star").get<VectorXd>();
  p.zeta_star = j.value("zeta_star", nlohmann::json::array()).get<MatrixXd>();
}

void to_json(nlohmann::json& j, const ConditionalMvLmmParams& p) {
  j = nlohmann::json::array();
  for (const auto& [stratum, params] : p.strata) {
    nlohmann::json e = params;
    e["stratum"] = stratum;
    auto it = p.pooled_with.find(stratum);
    e["pooled_with"] = it == p.pooled_with.end() ? stratum : it->second;
    j.push_back(std::move(e));
  }
}

void from_json(const nlohmann::json& j, ConditionalMvLmmParams& p) {
  p.strata.clear();
  p.pooled_with.clear();
  for (const auto& e : j) {
    const int s = e.at("stratum").get<int>();
    p.strata[s] = e.get<StratumParams>();
    p.pooled_with[s] = e.value("pooled_with", s);
  }
}

void to_json(nlohmann::json& j, const SurvivalParams& p) {
  j = {{"alpha0", p.alpha0}, {"alpha", p.alpha}, {"zeta", p.zeta}};
}

void from_json(const nlohmann::json& j, SurvivalParams& p) {
  p.alpha0 = j.at("alpha0").get<VectorXd>();
  p.alpha = j.at("alpha").get<VectorXd>();
  p.zeta = j.value("zeta", nlohmann::json::array()).get<VectorXd>();
}

void to_json(nlohmann::json& j, const TieMap& t) { j = t.group; }
void from_json(const nlohmann::json& j, TieMap& t) { t.group = j.get<std::vector<int>>(); }

}  // namespace jmcal

namespace nlohmann {

namespace {
json number_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}
double from_number_or_null(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}
}  // namespace

void adl_serializer<Eigen::MatrixXd>::to_json(json& j, const Eigen::MatrixXd& m) {
  j = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(number_or_null(m(r, c)));
    j.push_back(std::move(row));
  }
}

void adl_serializer<Eigen::MatrixXd>::from_json(const json& j, Eigen::MatrixXd& m) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  m.resize(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw jmcal::Error(jmcal::ErrorKind::ParseError, "ragged matrix in JSON");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = from_number_or_null(row[static_cast<std::size_t>(c)]);
  }
}

void adl_serializer<Eigen::VectorXd>::to_json(json& j, const Eigen::VectorXd& v) {
  j = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(number_or_null(v(k)));
}

void adl_serializer<Eigen::VectorXd>::from_json(const json& j, Eigen::VectorXd& v) {
  v.resize(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = from_number_or_null(j[static_cast<std::size_t>(k)]);
}

}  // namespace nlohmann
