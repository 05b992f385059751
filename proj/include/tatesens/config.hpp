#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tatesens/data.hpp"
#include "tatesens/sensitivity.hpp"
#include "tatesens/simulation.hpp"
#include "tatesens/weighting.hpp"

namespace tatesens {

struct TableSource {
  std::filesystem::path path;
  TableSchema schema;
};

// New categorical column built by cross-classifying existing ones. Applied to
// the trial, and to the population when it has every component.
struct DerivedColumn {
  std::string name;
  std::vector<std::string> cross_classify;
};

struct RunConfig {
  TableSource trial;

  PopulationKind population_kind = PopulationKind::kFullDataset;
  std::optional<TableSource> population;        // dataset kinds
  std::filesystem::path summary_path;           // summary_stats kind
  bool trial_identifiable = false;
  std::optional<std::string> membership_column;

  VariableRoles roles;
  std::vector<DerivedColumn> derived;
  OutcomeModelSpec outcome;
  std::optional<TateSpec> tate;
  SensitivityConfig sensitivity;

  WeightPlan weighting;
  bool balance_adjusted_method1 = false;  // extra Method 1 run on within-trial weights

  bool coverage_strict = true;  // uncovered Z is an error, otherwise a warning

  std::optional<std::vector<std::string>> scan_candidates;  // default: X, Z, V
  bool scan_pairs = true;
  double scan_threshold = 1.96;

  std::filesystem::path output_dir;
  bool svg = true;
};

// JSON. Relative paths resolve against base_dir. Unknown keys are usage
// errors.
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Scenario file: one scenario object, or an array of them.
std::vector<ScenarioSpec> load_scenarios(const std::filesystem::path& path);

}  // namespace tatesens
