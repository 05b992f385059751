#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tatesens/data.hpp"
#include "tatesens/design.hpp"
#include "tatesens/estimation.hpp"
#include "tatesens/mixed.hpp"
#include "tatesens/weighting.hpp"

namespace tatesens {

enum class EffectScale {
  kAdditive,
  kLogOr,
  kOr,
  kLogRr,
  kRr,
  kLogRateRatio,
  kRateRatio,
};

std::string to_string(EffectScale s);
EffectScale effect_scale_from_string(const std::string& s);
bool is_ratio_scale(EffectScale s);  // OR, RR, rate ratio: exponentiated
// Throws unless the scale belongs to the model's link/family.
void check_scale(EffectScale s, Link link, Family family);

// One factor of the population-mean multiplier attached to an interaction
// coefficient. Textual form: "z:key", "v:key", "1-z:key", "1-v:key", where
// key is "column" or "column=level".
struct MeanFactor {
  enum class Source { kZ, kV };
  Source source = Source::kZ;
  std::string key;
  bool complement = false;

  std::string text() const;
  static MeanFactor parse(const std::string& text);
};

// Coefficient multiplied by the product of its factors' means. A term with
// several factors uses the product of the means, i.e. the modifiers are
// treated as independent in the population unless the analyst supplies a
// cross-classified column.
struct TateTerm {
  std::string coefficient;
  std::vector<MeanFactor> factors;
};

struct TateSpec {
  std::string treatment_coefficient;  // "A" or "F:A"
  std::vector<TateTerm> terms;

  std::vector<std::string> z_keys() const;
  std::vector<std::string> v_keys() const;
};

// Reads the treatment coefficient and every interaction containing it off the
// fitted model. treatment_factors is {A} or {F, A}; each remaining factor of an
// interaction must be a declared Z or V column (or a level of one).
TateSpec derive_tate_spec(const FittedModel& model, const std::vector<std::string>& treatment_factors,
                          const std::vector<std::string>& z_columns,
                          const std::vector<std::string>& v_columns);

using MeanMap = std::map<std::string, double>;

Combination tate_combination(const TateSpec& spec, const MeanMap& z_means, const MeanMap& v_means);

// Link-scale (pre-exponentiation) lincom of the TATE formula.
LinComResult tate_point(const FittedModel& model, const TateSpec& spec, const MeanMap& z_means,
                        const MeanMap& v_means, double ci_level = 0.95);

// Exponentiates estimate and limits on ratio scales; std_error stays on the
// link scale.
LinComResult on_scale(const LinComResult& r, EffectScale scale);

struct TateInterval {
  LinComResult at_point;  // lincom at the ez point estimates
  double lower = 0, upper = 0;
  std::size_t corners = 0;  // lincoms evaluated at ez confidence-limit corners
};

// Point lincom at the ez points; limits are the minimum lower and maximum
// upper confidence limit over the point lincom and every corner of the ez
// confidence limits. Link scale.
TateInterval tate_ci(const FittedModel& model, const TateSpec& spec,
                     const std::map<std::string, MeanEstimate>& ez, const MeanMap& ev,
                     double ci_level = 0.95);

struct SensitivityConfig {
  std::map<std::string, MeanEstimate> ez;  // explicit E[Z|P=1]; others come from the population
  std::map<std::string, std::pair<double, double>> ev_range;  // E[V|P=1] low, high
  std::map<std::string, double> ev_fixed;  // V keys held fixed
  std::string sweep_axis;                  // default: first ev_range key
  std::optional<std::string> second_axis;  // full 2-axis grid
  int grid_points = 9;
  EffectScale scale = EffectScale::kAdditive;
  double ci_level = 0.95;

  void validate() const;
};

// n evenly spaced values; both endpoints are exact.
std::vector<double> sensitivity_grid(double low, double high, int n);

enum class Method { kOutcomeModel = 1, kWeighted = 2 };
std::string to_string(Method m);

struct SensitivityRow {
  double ev_value = 0;
  std::optional<double> ev_value2;
  double estimate = 0, lower = 0, upper = 0;  // on the result scale
  double std_error = 0;                       // link scale, point lincom
};

struct ReferenceEstimate {
  std::string label;
  double estimate = 0, lower = 0, upper = 0;
};

struct OutcomeModelSpec {
  ModelSpec model;  // empty response: the context's response
  bool random_intercepts = true;  // long-form outcomes only
  std::optional<VcovKind> vcov;
};

struct OutcomeFit {
  FittedModel model;
  std::optional<MixedFit> mixed;
  std::string report(const std::string& title, double ci_level) const;
};

// Unweighted when subject_weights is empty; otherwise one weight per subject
// row (trial row). Long-form outcomes use random intercepts or, with
// random_intercepts off, a pooled fit with subject-clustered variance.
OutcomeFit fit_outcome_model(const AnalysisContext& ctx, const OutcomeModelSpec& spec,
                             std::span<const double> subject_weights = {});

struct SensitivityResult {
  Method method = Method::kOutcomeModel;
  EffectScale scale = EffectScale::kAdditive;
  std::string sweep_axis;
  std::optional<std::string> second_axis;
  std::vector<SensitivityRow> rows;
  OutcomeFit fit;
  TateSpec tate;
  std::map<std::string, MeanEstimate> ez_used;
  std::optional<ReferenceEstimate> reference;
  std::optional<WeightSet> weights;
  std::vector<std::string> notes;
  std::string variant;  // free label, e.g. "balance-adjusted"
};

// Method 1: outcome model fit to the trial (optionally with within-trial
// balancing weights), evaluated across the sensitivity grid.
SensitivityResult run_method1(const AnalysisContext& ctx, const PopulationTarget& pop,
                              const OutcomeModelSpec& outcome, const std::optional<TateSpec>& tate,
                              const SensitivityConfig& cfg,
                              std::span<const double> subject_weights = {});

struct WeightPlan {
  std::vector<std::string> xz_covars;    // default: roles X + Z
  std::vector<std::string> full_covars;  // default: roles X + Z + V
  TwoStepOptions two_step;
};

// Method 2: same model fit to the trial weighted to the population.
SensitivityResult run_method2(const AnalysisContext& ctx, const PopulationTarget& pop,
                              const OutcomeModelSpec& outcome, const std::optional<TateSpec>& tate,
                              const SensitivityConfig& cfg, const WeightPlan& plan = {});

struct MethodComparison {
  bool agree = false;
  std::string summary;
};

// Agreement: at both ends of the sweep, each method's point estimate lies
// inside the other method's interval.
MethodComparison compare_methods(const SensitivityResult& m1, const SensitivityResult& m2);

// Delimited table: ev_value[,ev_value2],estimate,lower,upper,method,scale.
std::string sensitivity_csv(std::span<const SensitivityResult> results);
// Long-form polylines: method,line,ev_value,value with line in
// {estimate, lower, upper}.
std::string sensitivity_plot_data(std::span<const SensitivityResult> results);
std::string sensitivity_summary(std::span<const SensitivityResult> results);

// Effect-modifier scan.
struct ScanCandidate {
  std::string label;
  std::vector<std::string> columns;
  bool cross_classify = false;  // categorical columns merged into one factor
};

// Single columns, every pair as a product, and cross-classifications of
// categorical (or binary) pairs.
std::vector<ScanCandidate> default_scan_candidates(const DataTable& table,
                                                   const std::vector<std::string>& columns);

struct ScanRow {
  std::string candidate;
  std::string coefficient;
  double estimate = 0, std_error = 0, statistic = 0;
  std::optional<double> df;
  bool flagged = false;
};

struct ScanReport {
  std::vector<ScanRow> rows;  // sorted by |statistic|, descending
  std::vector<std::string> notes;
  double threshold = 1.96;
};

ScanReport scan_effect_modifiers(const AnalysisContext& ctx, const OutcomeModelSpec& base,
                                 const std::vector<ScanCandidate>& candidates,
                                 double threshold = 1.96);
std::string scan_report_text(const ScanReport& report);

// Throws kUnobservedModifier when a named modifier is not a trial column.
void reject_unobserved_in_trial(const DataTable& trial, const std::vector<std::string>& modifiers);
void reject_unobserved_in_trial(const std::vector<std::string>& trial_columns,
                                const std::vector<std::string>& modifiers);

}  // namespace tatesens
