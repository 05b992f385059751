#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tatesens/config.hpp"
#include "tatesens/sensitivity.hpp"
#include "tatesens/simulation.hpp"

namespace tatesens {

struct LoadedInputs {
  AnalysisContext context;
  PopulationTarget population;
  CoverageReport coverage;
  std::vector<std::string> warnings;
};

// Ingest, derived columns, role declaration and the coverage check. Modifiers
// missing from the trial are rejected before anything is loaded.
LoadedInputs load_inputs(const RunConfig& cfg);

enum class MethodChoice { kOne, kTwo, kBoth };
MethodChoice method_choice_from_string(const std::string& s);

struct AnalyzeOutput {
  std::vector<SensitivityResult> results;
  std::optional<MethodComparison> comparison;
  std::vector<std::filesystem::path> files;
};

// Writes coefficients.txt, balance.txt, sensitivity.csv, sensitivity_plot.csv,
// summary.txt and (optionally) sensitivity.svg / group_effects.svg.
AnalyzeOutput run_analyze(const RunConfig& cfg, MethodChoice method,
                          const std::filesystem::path& out_dir);

// Writes scan.txt.
ScanReport run_scan(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Writes eval_report.csv and variance.txt.
std::vector<EvalReport> run_simulate(const std::vector<ScenarioSpec>& scenarios,
                                     const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace tatesens
