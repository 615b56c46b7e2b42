#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "jmcal/model.hpp"

namespace jmcal {

// Entry point of the `jmcal` command-line tool. Subcommands: fit, bootstrap,
// simulate, oracle, generate. Every run writes one JSON document (to
// --out or `out`); diagnostics go to `err`. Returns the process exit code:
// 0 when the run converged without flags, 1 for model errors or flagged
// results, 2 for input/output errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Tie map from 1-based interval groups such as {"1,2"}; "all" ties every
// interval. Untied intervals keep their own intercept.
TieMap parse_tie_groups(const std::vector<std::string>& groups, int intervals);

}  // namespace jmcal
