#include "jmcal/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "jmcal/error.hpp"

namespace jmcal {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          field.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && ws(static_cast<unsigned char>(s[b]))) ++b;
  return s.substr(b);
}

[[noreturn]] void parse_error(const std::string& file, std::size_t row, std::size_t col, const std::string& what) {
  throw Error(ErrorKind::ParseError,
              file + " row " + std::to_string(row) + ", column " + std::to_string(col) + ": " + what);
}

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;  // 1-based line number of each row

  std::size_t column(const std::string& col) const {
    const auto it = std::find(header.begin(), header.end(), col);
    if (it == header.end()) parse_error(name, 1, header.size() + 1, "missing required column '" + col + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table read_table(std::istream& in, const std::string& name) {
  Table t;
  t.name = name;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    for (auto& f : fields) f = trim(f);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      parse_error(name, n, std::min(fields.size(), t.header.size()) + 1,
                  "expected " + std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line.push_back(n);
  }
  if (t.header.empty()) parse_error(name, 1, 1, "header row required");
  return t;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

double parse_double(const Table& t, std::size_t r, std::size_t c) {
  const std::string& s = t.rows[r][c];
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    parse_error(t.name, t.line[r], c + 1, "'" + s + "' is not a finite number");
  }
  return v;
}

long parse_int(const Table& t, std::size_t r, std::size_t c) {
  const std::string& s = t.rows[r][c];
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    parse_error(t.name, t.line[r], c + 1, "'" + s + "' is not an integer");
  }
  return v;
}

[[noreturn]] void validation_failed(const std::vector<std::string>& problems) {
  std::string msg = "panel failed validation:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw Error(ErrorKind::ValidationFailed, msg);
}

std::vector<double> infer_grid(std::vector<double> times, double tol) {
  std::sort(times.begin(), times.end());
  std::vector<double> grid;
  for (double t : times) {
    if (grid.empty() || t - grid.back() > tol) grid.push_back(t);
  }
  return grid;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q.push_back('"');
    q.push_back(c);
  }
  q.push_back('"');
  return q;
}

}  // namespace

LongitudinalPanel read_panel(std::istream& long_csv, std::istream& events_csv, const LoadOptions& opts) {
  const Table lt = read_table(long_csv, "long file");
  const Table et = read_table(events_csv, "events file");
  const std::size_t c_sid = lt.column("subject_id"), c_time = lt.column("time"), c_marker = lt.column("marker"),
                    c_value = lt.column("value");
  const std::size_t e_sid = et.column("subject_id"), e_last = et.column("last_visit_index"),
                    e_event = et.column("event_observed");
  std::vector<std::size_t> e_cov;
  for (const auto& c : opts.covariates) e_cov.push_back(et.column(c));

  LongitudinalPanel panel;
  panel.covariate_names = opts.covariates;

  // Marker set.
  if (opts.markers.empty()) {
    for (const auto& row : lt.rows) {
      if (std::find(panel.marker_names.begin(), panel.marker_names.end(), row[c_marker]) == panel.marker_names.end()) {
        panel.marker_names.push_back(row[c_marker]);
      }
    }
  } else {
    panel.marker_names = opts.markers;
  }
  std::map<std::string, int> marker_index;
  for (std::size_t p = 0; p < panel.marker_names.size(); ++p) marker_index[panel.marker_names[p]] = static_cast<int>(p);

  // Grid.
  std::vector<double> times(lt.rows.size());
  for (std::size_t r = 0; r < lt.rows.size(); ++r) times[r] = parse_double(lt, r, c_time);
  panel.grid.times = opts.grid.times.empty() ? infer_grid(times, opts.grid.tolerance) : opts.grid.times;
  const auto grid_index = [&](std::size_t r) {
    const auto& g = panel.grid.times;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (std::abs(times[r] - g[j]) <= opts.grid.tolerance) return static_cast<int>(j);
    }
    throw Error(ErrorKind::GridMismatch, "long file row " + std::to_string(lt.line[r]) + ": time " +
                                             lt.rows[r][c_time] + " is not on the grid");
  };

  // Subjects from the events file.
  std::map<std::string, std::size_t> subject_index;
  std::vector<std::string> problems;
  const int P = panel.P();
  const int J = panel.J();
  for (std::size_t r = 0; r < et.rows.size(); ++r) {
    SubjectRecord s;
    s.id = et.rows[r][e_sid];
    const long last = parse_int(et, r, e_last);
    const long ev = parse_int(et, r, e_event);
    if (ev != 0 && ev != 1) parse_error(et.name, et.line[r], e_event + 1, "event_observed must be 0 or 1");
    if (last < 1 || last > J) parse_error(et.name, et.line[r], e_last + 1, "last_visit_index outside 1.." + std::to_string(J));
    s.visits = static_cast<int>(last);
    s.event = ev == 1;
    s.markers = MatrixXd::Constant(P, s.visits, std::numeric_limits<double>::quiet_NaN());
    s.covariates.resize(static_cast<Eigen::Index>(e_cov.size()));
    for (std::size_t c = 0; c < e_cov.size(); ++c) s.covariates(static_cast<Eigen::Index>(c)) = parse_double(et, r, e_cov[c]);
    if (!subject_index.emplace(s.id, panel.subjects.size()).second) {
      problems.push_back("events file row " + std::to_string(et.line[r]) + ": duplicate subject " + s.id);
      continue;
    }
    panel.subjects.push_back(std::move(s));
  }

  // Measurements.
  for (std::size_t r = 0; r < lt.rows.size(); ++r) {
    const auto& row = lt.rows[r];
    const auto mi = marker_index.find(row[c_marker]);
    if (mi == marker_index.end()) continue;
    const int j = grid_index(r);
    const auto si = subject_index.find(row[c_sid]);
    if (si == subject_index.end()) {
      problems.push_back("long file row " + std::to_string(lt.line[r]) + ": subject " + row[c_sid] +
                         " has no events record");
      continue;
    }
    if (is_missing(row[c_value])) continue;
    double v = parse_double(lt, r, c_value);
    if (opts.log_markers) {
      if (!(v > 0)) {
        problems.push_back("long file row " + std::to_string(lt.line[r]) + ": value " + row[c_value] +
                           " cannot be log-transformed");
        continue;
      }
      v = std::log(v);
    }
    SubjectRecord& s = panel.subjects[si->second];
    if (j >= s.visits) {
      problems.push_back("long file row " + std::to_string(lt.line[r]) + ": measurement after the last visit of " +
                         s.id);
      continue;
    }
    double& cell = s.markers(mi->second, j);
    if (!std::isnan(cell)) {
      problems.push_back("long file row " + std::to_string(lt.line[r]) + ": duplicate measurement for " + s.id);
      continue;
    }
    cell = v;
  }
  for (const auto& name : panel.marker_names) {
    if (std::none_of(lt.rows.begin(), lt.rows.end(), [&](const auto& row) { return row[c_marker] == name; })) {
      problems.push_back("marker " + name + " does not occur in the long file");
    }
  }
  for (const auto& v : validate_panel(panel)) {
    problems.push_back((v.subject.empty() ? std::string("panel") : "subject " + v.subject) + ": " + v.rule);
  }
  if (!problems.empty()) validation_failed(problems);
  return panel;
}

LongitudinalPanel load_panel(const std::string& long_csv_path, const std::string& events_csv_path,
                             const LoadOptions& opts) {
  std::ifstream lf(long_csv_path);
  if (!lf) throw Error(ErrorKind::Io, "cannot open " + long_csv_path);
  std::ifstream ef(events_csv_path);
  if (!ef) throw Error(ErrorKind::Io, "cannot open " + events_csv_path);
  return read_panel(lf, ef, opts);
}

void write_panel(const LongitudinalPanel& panel, std::ostream& long_csv, std::ostream& events_csv) {
  long_csv << "subject_id,time,marker,value\n";
  for (const auto& s : panel.subjects) {
    for (int j = 0; j < s.visits; ++j) {
      for (int p = 0; p < panel.P(); ++p) {
        const double v = s.markers(p, j);
        if (std::isnan(v)) continue;
        long_csv << quote_if_needed(s.id) << ',' << format_double(panel.grid[j]) << ','
                 << quote_if_needed(panel.marker_names[static_cast<std::size_t>(p)]) << ',' << format_double(v) << '\n';
      }
    }
  }
  events_csv << "subject_id,last_visit_index,event_observed";
  for (const auto& c : panel.covariate_names) events_csv << ',' << quote_if_needed(c);
  events_csv << '\n';
  for (const auto& s : panel.subjects) {
    events_csv << quote_if_needed(s.id) << ',' << s.visits << ',' << (s.event ? 1 : 0);
    for (Eigen::Index c = 0; c < s.covariates.size(); ++c) events_csv << ',' << format_double(s.covariates(c));
    events_csv << '\n';
  }
}

void save_panel(const LongitudinalPanel& panel, const std::string& long_csv_path, const std::string& events_csv_path) {
  std::ofstream lf(long_csv_path);
  if (!lf) throw Error(ErrorKind::Io, "cannot write " + long_csv_path);
  std::ofstream ef(events_csv_path);
  if (!ef) throw Error(ErrorKind::Io, "cannot write " + events_csv_path);
  write_panel(panel, lf, ef);
  if (!lf || !ef) throw Error(ErrorKind::Io, "failed writing panel files");
}

}  // namespace jmcal
