#include "jmcal/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "jmcal/bootstrap.hpp"
#include "jmcal/calibration.hpp"
#include "jmcal/error.hpp"
#include "jmcal/io.hpp"
#include "jmcal/kernels.hpp"
#include "jmcal/quadrature.hpp"
#include "jmcal/simgen.hpp"

namespace jmcal {

using nlohmann::json;

TieMap parse_tie_groups(const std::vector<std::string>& groups, int intervals) {
  std::vector<int> label(static_cast<std::size_t>(intervals));
  std::iota(label.begin(), label.end(), 0);
  for (const auto& g : groups) {
    if (g == "all") {
      std::fill(label.begin(), label.end(), 0);
      continue;
    }
    std::vector<int> members;
    std::stringstream ss(g);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      int k = 0;
      try {
        std::size_t used = 0;
        k = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(ErrorKind::ValidationFailed, "tie group '" + g + "' must list interval numbers");
      }
      if (k < 1 || k > intervals) {
        throw Error(ErrorKind::ValidationFailed, "tie group '" + g + "' names interval " + std::to_string(k) +
                                                     " outside 1.." + std::to_string(intervals));
      }
      members.push_back(k - 1);
    }
    if (members.empty()) continue;
    const int target = label[static_cast<std::size_t>(members.front())];
    for (int m : members) {
      const int old = label[static_cast<std::size_t>(m)];
      for (auto& l : label) {
        if (l == old) l = target;
      }
    }
  }
  // Relabel to consecutive groups in interval order.
  TieMap t;
  std::map<int, int> relabel;
  for (int l : label) {
    const auto it = relabel.emplace(l, static_cast<int>(relabel.size())).first;
    t.group.push_back(it->second);
  }
  return t;
}

namespace {

struct PanelArgs {
  std::string long_path;
  std::string events_path;
  std::vector<double> grid;
  double grid_tol = 1e-6;
  std::vector<std::string> markers;
  std::vector<std::string> covariates;
  bool log_markers = false;

  void add(CLI::App* app, bool required) {
    app->add_option("--long", long_path, "long-format marker CSV (subject_id,time,marker,value)")->required(required);
    app->add_option("--events", events_path, "events CSV (subject_id,last_visit_index,event_observed,...)")
        ->required(required);
    app->add_option("--grid", grid, "visit grid times; inferred from the data when omitted")->delimiter(',');
    app->add_option("--grid-tolerance", grid_tol, "tolerance when matching times to the grid");
    app->add_option("--markers", markers, "markers to use, in order")->delimiter(',');
    app->add_option("--covariates", covariates, "baseline covariate columns of the events file")->delimiter(',');
    app->add_flag("--log-markers", log_markers, "apply the natural log to every marker value");
  }

  LongitudinalPanel load() const {
    LoadOptions o;
    o.grid.times = grid;
    o.grid.tolerance = grid_tol;
    o.markers = markers;
    o.covariates = covariates;
    o.log_markers = log_markers;
    return load_panel(long_path, events_path, o);
  }

  json echo() const {
    return {{"long", long_path},     {"events", events_path},         {"grid", grid},
            {"grid_tolerance", grid_tol}, {"markers", markers}, {"covariates", covariates},
            {"log_markers", log_markers}};
  }
};

struct PipelineArgs {
  std::vector<std::string> no_slope;
  bool constrain = false;
  int M = 10;
  std::uint64_t seed = 1;
  std::vector<std::string> tie;
  std::string mode = "corrected";
  int threads = 1;

  void add(CLI::App* app) {
    app->add_option("--no-random-slope", no_slope, "drop the random slope of this marker (repeatable)");
    app->add_flag("--constrain-covariate-effects", constrain, "share covariate effects across event-time strata");
    app->add_option("--M", M, "number of pseudo-data replicates")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "master random seed");
    app->add_option("--tie-alpha0", tie, "tie baseline intercepts of these 1-based intervals, e.g. 1,2 (or 'all')");
    app->add_option("--hazard", mode, "survival likelihood: corrected, naive or frozen")
        ->check(CLI::IsMember({"corrected", "naive", "frozen"}));
    app->add_option("--threads", threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  }

  CalibrationOptions options(const LongitudinalPanel& panel) const {
    CalibrationOptions o;
    o.M = M;
    o.seed = seed;
    o.threads = threads;
    o.tie = parse_tie_groups(tie, panel.J() - 1);
    o.pairwise.constrain_covariates = constrain;
    o.pairwise.structure.slope.assign(static_cast<std::size_t>(panel.P()), true);
    for (const auto& m : no_slope) {
      const auto it = std::find(panel.marker_names.begin(), panel.marker_names.end(), m);
      if (it == panel.marker_names.end()) {
        throw Error(ErrorKind::ValidationFailed, "--no-random-slope names unknown marker " + m);
      }
      o.pairwise.structure.slope[static_cast<std::size_t>(it - panel.marker_names.begin())] = false;
    }
    o.survival.mode = mode == "naive" ? HazardMode::Naive : mode == "frozen" ? HazardMode::FrozenOmega
                                                                            : HazardMode::Corrected;
    return o;
  }

  json echo() const {
    return {{"no_random_slope", no_slope}, {"constrain_covariate_effects", constrain},
            {"M", M}, {"seed", seed}, {"tie_alpha0", tie}, {"hazard", mode}, {"threads", threads}};
  }
};

json estimates_json(const std::vector<std::pair<std::string, double>>& est) {
  json j = json::object();
  for (const auto& [k, v] : est) j[k] = v;
  return j;
}

json calibration_flags(const CalibrationResult& r) {
  json flags = json::array();
  if (!r.converged) flags.push_back("not_converged");
  if (r.separation) flags.push_back("separation");
  if (r.failures > 0) flags.push_back("replicate_failures");
  return flags;
}

void emit(const json& doc, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << doc.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot write " + path);
  f << doc.dump(2) << '\n';
  if (!f) throw Error(ErrorKind::Io, "failed writing " + path);
}

TruthParams load_truth(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path);
  try {
    return json::parse(f).get<TruthParams>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint longitudinal and time-to-event models by regression calibration"};
  app.name("jmcal");
  app.require_subcommand(1);
  std::string out_path;
  app.add_option("--out", out_path, "write the JSON result here instead of standard output");

  PanelArgs fit_panel, boot_panel, oracle_panel;
  PipelineArgs fit_pipe, boot_pipe;

  auto* fit = app.add_subcommand("fit", "run the calibration pipeline on panel CSVs");
  fit_panel.add(fit, true);
  fit_pipe.add(fit);

  auto* boot = app.add_subcommand("bootstrap", "subject-level bootstrap of the calibration pipeline");
  boot_panel.add(boot, true);
  boot_pipe.add(boot);
  int B = 200;
  std::vector<double> levels{0.95};
  boot->add_option("--B", B, "number of resamples")->check(CLI::Range(2, 1000000));
  boot->add_option("--levels", levels, "interval levels")->delimiter(',');

  auto* sim = app.add_subcommand("simulate", "simulation study comparing truth, observed and proposed estimators");
  std::string truth_path;
  bool variance_075 = false, single_marker = false, sim_from_one = false;
  int sim_I = 300, replicates = 100, sim_M = 10, sim_threads = 1;
  std::uint64_t sim_seed = 1;
  std::vector<std::string> estimators{"truth", "observed", "proposed"};
  sim->add_option("--truth", truth_path, "truth parameters as JSON (default: three-marker reference design)");
  sim->add_flag("--residual-variance-075", variance_075, "read 0.75 as the residual variance, not the SD");
  sim->add_flag("--single-marker", single_marker, "use the single-marker design");
  sim->add_flag("--grid-from-one", sim_from_one, "place the reference visits at t = 1..5 instead of 0..4");
  sim->add_option("--I", sim_I, "subjects per replicate")->check(CLI::PositiveNumber);
  sim->add_option("--replicates", replicates, "simulated data sets")->check(CLI::Range(2, 1000000));
  sim->add_option("--estimators", estimators, "subset of truth,observed,proposed")
      ->delimiter(',')
      ->check(CLI::IsMember({"truth", "observed", "proposed"}));
  sim->add_option("--M", sim_M, "pseudo-data replicates of the proposed estimator")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "master random seed");
  sim->add_option("--threads", sim_threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  auto* oracle = app.add_subcommand("oracle", "single-marker joint maximum likelihood by quadrature");
  oracle_panel.add(oracle, false);
  bool oracle_simulate = false;
  int oracle_I = 300, nodes = 40, oracle_M = 10, oracle_threads = 1;
  double radius = 8.0;
  std::string rule = "gauss-hermite";
  std::uint64_t oracle_seed = 1;
  std::vector<std::string> oracle_tie;
  oracle->add_flag("--simulate", oracle_simulate, "simulate a single-marker panel instead of reading CSVs");
  oracle->add_option("--I", oracle_I, "subjects when simulating")->check(CLI::PositiveNumber);
  oracle->add_option("--nodes", nodes, "quadrature nodes per dimension")->check(CLI::PositiveNumber);
  oracle->add_option("--rule", rule, "gauss-hermite or trapezoid")->check(CLI::IsMember({"gauss-hermite", "trapezoid"}));
  oracle->add_option("--radius", radius, "trapezoid half-width in posterior SDs");
  oracle->add_option("--M", oracle_M, "pseudo-data replicates of the comparison pipeline run")
      ->check(CLI::PositiveNumber);
  oracle->add_option("--seed", oracle_seed, "master random seed");
  oracle->add_option("--tie-alpha0", oracle_tie, "tie baseline intercepts of these 1-based intervals (or 'all')");
  oracle->add_option("--threads", oracle_threads, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  auto* gen = app.add_subcommand("generate", "write one simulated panel as CSV files");
  std::string gen_truth, gen_long, gen_events;
  bool gen_single = false, gen_075 = false, gen_from_one = false;
  int gen_I = 300;
  std::uint64_t gen_seed = 1;
  gen->add_option("--truth", gen_truth, "truth parameters as JSON (default: three-marker reference design)");
  gen->add_flag("--single-marker", gen_single, "use the single-marker design");
  gen->add_flag("--residual-variance-075", gen_075, "read 0.75 as the residual variance, not the SD");
  gen->add_flag("--grid-from-one", gen_from_one, "place the reference visits at t = 1..5 instead of 0..4");
  gen->add_option("--I", gen_I, "subjects")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--long-out", gen_long, "long CSV to write")->required();
  gen->add_option("--events-out", gen_events, "events CSV to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  json doc;
  int code = 0;
  try {
    doc["kernels"] = std::string(kernels::isa_name(kernels::active_isa()));
    if (*fit) {
      const LongitudinalPanel panel = fit_panel.load();
      const CalibrationOptions opts = fit_pipe.options(panel);
      const CalibrationResult r = run_calibration(panel, opts);
      doc["command"] = "fit";
      doc["seed"] = fit_pipe.seed;
      doc["config"] = {{"panel", fit_panel.echo()}, {"pipeline", fit_pipe.echo()}};
      doc["data"] = {{"subjects", panel.I()}, {"markers", panel.marker_names}, {"grid", panel.grid}};
      doc["estimates"] = estimates_json(named_estimates(r, panel));
      doc["result"] = r;
      doc["flags"] = calibration_flags(r);
    } else if (*boot) {
      const LongitudinalPanel panel = boot_panel.load();
      const CalibrationOptions opts = boot_pipe.options(panel);
      BootstrapOptions bo;
      bo.B = B;
      bo.levels = levels;
      bo.seed = boot_pipe.seed;
      bo.threads = boot_pipe.threads;
      const BootstrapResult r = bootstrap_ci(panel, opts, bo);
      doc["command"] = "bootstrap";
      doc["seed"] = boot_pipe.seed;
      doc["config"] = {{"panel", boot_panel.echo()}, {"pipeline", boot_pipe.echo()}, {"B", B}, {"levels", levels}};
      doc["result"] = r;
      json flags = calibration_flags(r.point);
      if (r.failures > 0) flags.push_back("resample_failures");
      doc["flags"] = flags;
    } else if (*sim) {
      TruthParams truth = !truth_path.empty() ? load_truth(truth_path)
                          : single_marker     ? single_marker_truth(sim_from_one)
                                              : table1_truth(variance_075, sim_from_one);
      if (truth_path.empty() && single_marker && variance_075) truth.longitudinal.sigma_eps2.setConstant(0.75);
      StudyOptions so;
      so.I = sim_I;
      so.replicates = replicates;
      so.seed = sim_seed;
      so.threads = sim_threads;
      so.calibration.M = sim_M;
      so.estimators.clear();
      for (const auto& e : estimators) {
        so.estimators.push_back(e == "truth" ? Estimator::Truth : e == "observed" ? Estimator::Observed
                                                                                  : Estimator::Proposed);
      }
      const StudyReport rep = run_study(truth, so);
      doc["command"] = "simulate";
      doc["seed"] = sim_seed;
      doc["config"] = {{"truth", truth},     {"I", sim_I},         {"replicates", replicates},
                       {"estimators", estimators}, {"M", sim_M}, {"threads", sim_threads}};
      doc["result"] = rep;
      json flags = json::array();
      for (const auto& s : rep.estimators) {
        if (s.failures > 0) flags.push_back(estimator_name(s.estimator) + "_failures");
      }
      doc["flags"] = flags;
    } else if (*oracle) {
      LongitudinalPanel panel;
      if (oracle_simulate) {
        panel = generate_panel(single_marker_truth(), oracle_I, oracle_seed).panel;
      } else {
        if (oracle_panel.long_path.empty() || oracle_panel.events_path.empty()) {
          throw Error(ErrorKind::ValidationFailed, "oracle needs --long and --events, or --simulate");
        }
        panel = oracle_panel.load();
      }
      CalibrationOptions co;
      co.M = oracle_M;
      co.seed = oracle_seed;
      co.threads = oracle_threads;
      co.tie = parse_tie_groups(oracle_tie, panel.J() - 1);
      const CalibrationResult cr = run_calibration(panel, co);
      JointParamsP1 init{cr.longitudinal, cr.survival};
      if (Eigen::LLT<MatrixXd>(init.longitudinal.sigma_gamma).info() != Eigen::Success) {
        init.longitudinal.sigma_gamma += 1e-3 * MatrixXd::Identity(2, 2);
      }
      JointMleOptions jo;
      jo.quad.nodes = nodes;
      jo.quad.radius = radius;
      jo.quad.rule = rule == "trapezoid" ? QuadRule::Trapezoid : QuadRule::GaussHermite;
      jo.tie = *co.tie;
      jo.threads = oracle_threads;
      const JointMleFit jf = joint_mle_p1(panel, init, jo);
      doc["command"] = "oracle";
      doc["seed"] = oracle_seed;
      doc["config"] = {{"panel", oracle_panel.echo()}, {"simulate", oracle_simulate}, {"I", oracle_I},
                       {"nodes", nodes},  {"rule", rule},   {"radius", radius}, {"M", oracle_M},
                       {"tie_alpha0", oracle_tie}, {"threads", oracle_threads}};
      doc["result"] = {{"quadrature", {{"params", jf.params}, {"loglik", jf.loglik}, {"converged", jf.converged},
                                       {"iterations", jf.iterations}}},
                       {"pipeline", {{"survival", cr.survival}, {"longitudinal", cr.longitudinal}}}};
      json flags = json::array();
      if (!jf.converged) flags.push_back("not_converged");
      doc["flags"] = flags;
    } else if (*gen) {
      TruthParams truth = !gen_truth.empty() ? load_truth(gen_truth)
                          : gen_single       ? single_marker_truth(gen_from_one)
                                             : table1_truth(gen_075, gen_from_one);
      const GeneratedPanel gp = generate_panel(truth, gen_I, gen_seed);
      save_panel(gp.panel, gen_long, gen_events);
      doc["command"] = "generate";
      doc["seed"] = gen_seed;
      doc["config"] = {{"truth", truth}, {"I", gen_I}, {"long_out", gen_long}, {"events_out", gen_events}};
      int events = 0;
      for (const auto& s : gp.panel.subjects) events += s.event ? 1 : 0;
      doc["result"] = {{"subjects", gp.panel.I()}, {"events", events}};
      doc["flags"] = json::array();
    }
    code = doc["flags"].empty() ? 0 : 1;
    doc["exit_code"] = code;
    emit(doc, out_path, out);
  } catch (const Error& e) {
    code = exit_code(e.kind());
    json edoc{{"error", {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}}}, {"exit_code", code}};
    err << "jmcal: " << to_string(e.kind()) << ": " << e.what() << '\n';
    try {
      emit(edoc, out_path, out);
    } catch (const Error&) {
      out << edoc.dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    code = 1;
    json edoc{{"error", {{"kind", "Internal"}, {"message", e.what()}}}, {"exit_code", code}};
    err << "jmcal: " << e.what() << '\n';
    out << edoc.dump(2) << '\n';
  }
  return code;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("jmcal");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace jmcal
