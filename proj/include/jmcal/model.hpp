#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace jmcal {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Shared discrete visit / event-time grid t_1 < ... < t_J.
struct TimeGrid {
  std::vector<double> times;

  int size() const { return static_cast<int>(times.size()); }
  double operator[](int j) const { return times[static_cast<std::size_t>(j)]; }
};

// One subject's follow-up. `visits` is the number of observed visits J_i.
// When `event` is true the event happened in the interval ending at grid
// index `visits` (0-based), i.e. at t_{J_i+1}; otherwise the subject was
// administratively censored at t_J and visits == J.
struct SubjectRecord {
  std::string id;
  int visits = 0;
  bool event = false;
  MatrixXd markers;     // P x visits, NaN marks a missing cell
  VectorXd covariates;  // q, baseline only
};

struct LongitudinalPanel {
  TimeGrid grid;
  std::vector<SubjectRecord> subjects;
  std::vector<std::string> marker_names;
  std::vector<std::string> covariate_names;

  int J() const { return grid.size(); }
  int P() const { return static_cast<int>(marker_names.size()); }
  int q() const { return static_cast<int>(covariate_names.size()); }
  int I() const { return static_cast<int>(subjects.size()); }
};

struct Violation {
  std::string subject;  // empty for panel-level rules
  std::string rule;
};

std::vector<Violation> validate_panel(const LongitudinalPanel& panel);

// Event-time strata. A subject's stratum is its visit count: event strata
// take values 1..J-1 (event at grid index J_i), the censored stratum is J.
int stratum_of(const SubjectRecord& subject);
bool is_censored_stratum(int stratum, const TimeGrid& grid);
std::string stratum_label(int stratum, const TimeGrid& grid);

// Per-marker random-effect layout. A marker without a random slope keeps
// zero rows/columns for the slope in every 2P x 2P covariance.
struct RandomEffectsStructure {
  std::vector<bool> slope;  // size P; empty means "slope for every marker"

  bool has_slope(int marker) const {
    return slope.empty() || slope[static_cast<std::size_t>(marker)];
  }
  bool any_slope(int P) const;
};

// beta is interleaved (b_10, b_11, b_20, b_21, ...); gamma follows the same
// ordering. eta is P x q.
struct MvLmmParams {
  VectorXd beta;
  MatrixXd sigma_gamma;
  VectorXd sigma_eps2;
  MatrixXd eta;

  int P() const { return static_cast<int>(sigma_eps2.size()); }
};

struct StratumParams {
  VectorXd beta_star;
  MatrixXd sigma_gamma_star;
  VectorXd sigma_eps2_star;
  MatrixXd zeta_star;  // P x q
};

struct ConditionalMvLmmParams {
  std::map<int, StratumParams> strata;
  // Stratum -> first stratum of the pooled group it was fitted with.
  std::map<int, int> pooled_with;

  const StratumParams& at(int stratum) const;
};

// alpha0 holds one intercept per hazard interval (J-1 of them, interval k
// ends at grid index k+1); tied intervals carry equal values.
struct SurvivalParams {
  VectorXd alpha0;
  VectorXd alpha;
  VectorXd zeta;
};

// Maps each hazard interval to a baseline-intercept group.
struct TieMap {
  std::vector<int> group;

  static TieMap distinct(int intervals);
  static TieMap tied(int intervals);
  int groups() const;
  int intervals() const { return static_cast<int>(group.size()); }
  bool valid() const;
};

// beta_p0 + beta_p1 * t on the interleaved layout.
double trajectory(const VectorXd& beta, int marker, double t);

void to_json(nlohmann::json& j, const TimeGrid& g);
void from_json(const nlohmann::json& j, TimeGrid& g);
void to_json(nlohmann::json& j, const SubjectRecord& s);
void from_json(const nlohmann::json& j, SubjectRecord& s);
void to_json(nlohmann::json& j, const LongitudinalPanel& p);
void from_json(const nlohmann::json& j, LongitudinalPanel& p);
void to_json(nlohmann::json& j, const MvLmmParams& p);
void from_json(const nlohmann::json& j, MvLmmParams& p);
void to_json(nlohmann::json& j, const StratumParams& p);
void from_json(const nlohmann::json& j, StratumParams& p);
void to_json(nlohmann::json& j, const ConditionalMvLmmParams& p);
void from_json(const nlohmann::json& j, ConditionalMvLmmParams& p);
void to_json(nlohmann::json& j, const SurvivalParams& p);
void from_json(const nlohmann::json& j, SurvivalParams& p);
void to_json(nlohmann::json& j, const TieMap& t);
void from_json(const nlohmann::json& j, TieMap& t);

bool operator==(const SubjectRecord& a, const SubjectRecord& b);
bool operator==(const LongitudinalPanel& a, const LongitudinalPanel& b);

}  // namespace jmcal

// Dense matrices serialize as row-major nested arrays; NaN becomes null.
namespace nlohmann {
template <>
struct adl_serializer<Eigen::MatrixXd> {
  static void to_json(json& j, const Eigen::MatrixXd& m);
  static void from_json(const json& j, Eigen::MatrixXd& m);
};
template <>
struct adl_serializer<Eigen::VectorXd> {
  static void to_json(json& j, const Eigen::VectorXd& v);
  static void from_json(const json& j, Eigen::VectorXd& v);
};
}  // namespace nlohmann
