#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "jmcal/model.hpp"

namespace jmcal {

// Raw visit times are snapped to grid times within `tolerance`. An empty
// `times` infers the grid from the distinct times in the long file.
struct GridSpec {
  std::vector<double> times;
  double tolerance = 1e-6;
};

struct LoadOptions {
  GridSpec grid;
  std::vector<std::string> markers;     // empty: every marker, in order of appearance
  std::vector<std::string> covariates;  // extra columns of the events file
  bool log_markers = false;             // natural log, values must be positive
};

// Long file: subject_id,time,marker,value (empty or NA value = missing).
// Events file: subject_id,last_visit_index,event_observed[,covariates...],
// where last_visit_index is the 1-based number of visits.
// Errors: ParseError (row and column), GridMismatch, ValidationFailed.
LongitudinalPanel load_panel(const std::string& long_csv_path, const std::string& events_csv_path,
                             const LoadOptions& opts = {});
LongitudinalPanel read_panel(std::istream& long_csv, std::istream& events_csv, const LoadOptions& opts = {});

void save_panel(const LongitudinalPanel& panel, const std::string& long_csv_path, const std::string& events_csv_path);
void write_panel(const LongitudinalPanel& panel, std::ostream& long_csv, std::ostream& events_csv);

// Splits one CSV record; double quotes may wrap fields and "" escapes a quote.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace jmcal
