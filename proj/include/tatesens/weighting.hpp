#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tatesens/data.hpp"
#include "tatesens/design.hpp"

namespace tatesens {

enum class WeightProcedure {
  kByOdds,                 // W = (1 - ps) / ps, stacked trial + population
  kInverseProbability,     // W = 1 / ps, trial members identified in population
  kRatioOfProbability,     // W = Pr(cell | population) / Pr(cell | trial)
  kWithinTrialPropensity,  // 1/ps treated, 1/(1-ps) control, per-arm normalized
};

std::string to_string(WeightProcedure p);
WeightProcedure weight_procedure_from_string(const std::string& s);

struct BalanceRow {
  std::string covariate;  // "age", "female", "agegrp=le29"
  bool proportion = false;
  double treated = 0;     // weighted arm means
  double control = 0;
  double trial = 0;       // weighted, both arms
  std::optional<double> population;
  double std_diff_arms = 0;                // |treated - control| / pooled SD
  std::optional<double> std_diff_population;  // |trial - population| / pooled SD
  // Numeric covariates only.
  double trial_min = 0, trial_max = 0;
};

struct BalanceTable {
  std::vector<BalanceRow> rows;
  std::size_t n_treated = 0, n_control = 0;
  std::optional<std::size_t> n_population;
  double ess_treated = 0, ess_control = 0, ess_total = 0;

  const BalanceRow& row(const std::string& covariate) const;
};

struct WeightSet {
  std::vector<double> weights;  // one per trial row
  std::optional<std::vector<double>> participation_scores;
  WeightProcedure procedure = WeightProcedure::kByOdds;
  bool within_trial_adjusted = false;  // product with within-trial weights
  double ess = 0;
  BalanceTable balance;
  std::optional<BalanceTable> balance_before;
  std::vector<std::string> warnings;
  // Inverse-probability weighting: population rows of the trial members, in
  // the order of `weights`.
  std::vector<std::size_t> population_rows;
};

// Kish effective sample size (sum w)^2 / sum w^2.
double effective_sample_size(std::span<const double> w);

struct WeightOptions {
  // Terms added to the main effects of the covariates in the participation
  // or propensity model.
  std::vector<Term> extra_terms;
  // Per-trial-row prior weights for the participation model and product
  // weights (two-step use). Empty means 1.
  std::vector<double> base_weights;
  // Treatment column for arm-wise balance; empty skips arm columns.
  std::string treatment;
  // Covariates reported in the balance table (defaults to the model covariates).
  std::vector<std::string> balance_covariates;
};

WeightSet weight_by_odds(const DataTable& trial, const PopulationTarget& pop,
                         const std::vector<std::string>& covars, const WeightOptions& opts = {});

// `pop` must be flagged trial_identifiable and carry a membership column.
// Weights are returned for member rows in population order
// (WeightSet::population_rows). When `trial` has an id column also present in
// the population, weights are reordered to match trial rows.
WeightSet weight_inverse_probability(const PopulationTarget& pop,
                                     const std::vector<std::string>& covars,
                                     const WeightOptions& opts = {},
                                     const DataTable* trial = nullptr);

// Empirical joint distribution of categorical or binary columns.
JointCells joint_cells_of(const DataTable& table, const std::vector<std::string>& covars);

WeightSet weight_ratio_of_probability(const DataTable& trial, const JointCells& cells,
                                      const std::vector<std::string>& covars,
                                      const WeightOptions& opts = {});

WeightSet adjust_within_trial_balance(const DataTable& trial, const std::string& treatment,
                                      const std::vector<std::string>& covars,
                                      const WeightOptions& opts = {});

// The trial-to-population procedure legal for this population scenario:
// identifiable members -> inverse probability; other datasets -> by odds;
// summary statistics with joint cells -> ratio of probability. Summary
// statistics without joint cells cannot be weighted to.
WeightProcedure select_population_procedure(const PopulationTarget& pop);

struct TwoStepOptions {
  bool adjust_within_trial = true;
  std::optional<WeightProcedure> population_procedure;  // default: select_population_procedure
  std::vector<Term> participation_terms;
  std::vector<Term> propensity_terms;
};

// Within-trial propensity weights on full_covars (X, Z, V), then the
// trial-to-population weights fit on the within-weighted sample using
// xz_covars. Final weight is the product.
WeightSet compose_two_step(const DataTable& trial, const PopulationTarget& pop,
                           const std::string& treatment,
                           const std::vector<std::string>& xz_covars,
                           const std::vector<std::string>& full_covars,
                           const TwoStepOptions& opts = {});

// Weights each arm to the population separately by odds. Not recommended:
// it can distort between-arm balance on covariates absent from the
// population. Kept for comparison.
WeightSet weight_each_arm_separately(const DataTable& trial, const PopulationTarget& pop,
                                     const std::string& treatment,
                                     const std::vector<std::string>& xz_covars);

// Weighted arm means, population targets, standardized differences and ESS.
// treatment may be empty; pop may be null.
BalanceTable diagnostics(std::span<const double> weights, const DataTable& trial,
                         const std::string& treatment, const PopulationTarget* pop,
                         const std::vector<std::string>& covars);

// Delimited text with columns covariate, treated, control, trial, population,
// std_diff_arms, std_diff_population.
std::string balance_report(const BalanceTable& table, const std::string& title);

}  // namespace tatesens
