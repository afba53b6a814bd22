#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordergap/cluster.hpp"
#include "ordergap/grade_store.hpp"

namespace ordergap {

struct ReportOptions {
  // Experiment holding O2 baselines, for collapsed-only sweep rates.
  std::optional<std::string> o2_experiment;
  // Operator-declared contingency table.
  std::vector<std::vector<double>> chi_table;
  std::vector<std::string> cross_cores;
  Populations cross_populations;
};

struct Report {
  nlohmann::json data;
  std::string text;
};

// Grade summary plus one release comparison per patched arm, with the
// extra tables the run layout supports (collapse counts, sweep rates,
// restore/suppress asymmetry, χ², cross-core matrix). Throws
// IncompleteGradingError listing every pending run any table needs.
Report build_report(const GradeStore& store, const std::string& experiment, const ReportOptions& options = {});

}  // namespace ordergap
