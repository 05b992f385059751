#include "tatesens/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tatesens/error.hpp"
#include "tatesens/plot.hpp"

namespace tatesens {

namespace {

bool has_all(const DataTable& t, const std::vector<std::string>& cols) {
  return std::all_of(cols.begin(), cols.end(), [&](const std::string& c) { return t.has(c); });
}

DataTable apply_derived(DataTable t, const std::vector<DerivedColumn>& derived, bool required) {
  for (const auto& d : derived) {
    if (!has_all(t, d.cross_classify)) {
      if (required) {
        throw validation_error("derived column '" + d.name + "' needs missing columns");
      }
      continue;
    }
    t = cross_classify(t, d.cross_classify, d.name);
  }
  return t;
}

std::vector<std::string> all_covariates(const VariableRoles& r) {
  std::vector<std::string> out = r.x_covars;
  out.insert(out.end(), r.z_modifiers.begin(), r.z_modifiers.end());
  out.insert(out.end(), r.v_modifiers.begin(), r.v_modifiers.end());
  return out;
}

std::string result_title(const SensitivityResult& r) {
  std::string t = r.method == Method::kOutcomeModel ? "Method 1: outcome model fit to the trial"
                                                    : "Method 2: outcome model fit to the trial weighted "
                                                      "to the population";
  if (!r.variant.empty()) t += " (" + r.variant + ")";
  return t;
}

}  // namespace

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

LoadedInputs load_inputs(const RunConfig& cfg) {
  std::vector<std::string> available = read_csv_header(cfg.trial.path.string());
  for (const auto& d : cfg.derived) available.push_back(d.name);
  std::vector<std::string> modifiers = cfg.roles.z_modifiers;
  modifiers.insert(modifiers.end(), cfg.roles.v_modifiers.begin(), cfg.roles.v_modifiers.end());
  reject_unobserved_in_trial(available, modifiers);

  std::vector<std::string> warnings;
  LoadReport rep;
  DataTable trial = load_table(cfg.trial.path.string(), cfg.trial.schema, &rep);
  for (const auto& w : rep.warnings) warnings.push_back("trial: " + w);
  trial = apply_derived(std::move(trial), cfg.derived, true);

  PopulationTarget pop;
  if (cfg.population_kind == PopulationKind::kSummaryStats) {
    pop = PopulationTarget::summary(load_summary_stats(cfg.summary_path.string()));
  } else {
    LoadReport prep;
    DataTable pd = load_table(cfg.population->path.string(), cfg.population->schema, &prep);
    for (const auto& w : prep.warnings) warnings.push_back("population: " + w);
    pd = apply_derived(std::move(pd), cfg.derived, false);
    pop = cfg.population_kind == PopulationKind::kFullDataset
              ? PopulationTarget::full_dataset(std::move(pd), cfg.trial_identifiable,
                                               cfg.membership_column)
              : PopulationTarget::representative_sample(std::move(pd), cfg.trial_identifiable,
                                                        cfg.membership_column);
  }

  AnalysisContext ctx = declare_roles(std::move(trial), cfg.roles);
  CoverageReport cov = check_modifier_coverage(ctx, pop);
  if (!cov.ok()) {
    std::string msg;
    for (const auto& f : cov.flags) msg += (msg.empty() ? "" : "; ") + f;
    if (cfg.coverage_strict) throw coverage_error(msg);
    warnings.push_back("coverage: " + msg);
  }
  return LoadedInputs{std::move(ctx), std::move(pop), std::move(cov), std::move(warnings)};
}

MethodChoice method_choice_from_string(const std::string& s) {
  if (s == "1") return MethodChoice::kOne;
  if (s == "2") return MethodChoice::kTwo;
  if (s == "both") return MethodChoice::kBoth;
  throw usage_error("--method must be 1, 2 or both");
}

AnalyzeOutput run_analyze(const RunConfig& cfg, MethodChoice method,
                          const std::filesystem::path& out_dir) {
  const LoadedInputs in = load_inputs(cfg);
  const AnalysisContext& ctx = in.context;
  std::filesystem::create_directories(out_dir);
  AnalyzeOutput out;
  const SensitivityConfig& sc = cfg.sensitivity;
  const double level = sc.ci_level;

  if (method != MethodChoice::kTwo) {
    out.results.push_back(run_method1(ctx, in.population, cfg.outcome, cfg.tate, sc));
    if (cfg.balance_adjusted_method1) {
      std::vector<std::string> full = cfg.weighting.full_covars;
      if (full.empty()) full = all_covariates(cfg.roles);
      WeightOptions wo;
      wo.extra_terms = cfg.weighting.two_step.propensity_terms;
      const WeightSet within =
          adjust_within_trial_balance(ctx.subject_table(), cfg.roles.treatment, full, wo);
      SensitivityResult adj = run_method1(ctx, in.population, cfg.outcome, cfg.tate, sc, within.weights);
      adj.variant = "within-trial weighted";
      adj.weights = within;
      out.results.push_back(std::move(adj));
    }
  }
  if (method != MethodChoice::kOne) {
    out.results.push_back(run_method2(ctx, in.population, cfg.outcome, cfg.tate, sc, cfg.weighting));
  }

  const SensitivityResult* m1 = nullptr;
  const SensitivityResult* m2 = nullptr;
  for (const auto& r : out.results) {
    if (r.method == Method::kOutcomeModel && r.variant.empty()) m1 = &r;
    if (r.method == Method::kWeighted) m2 = &r;
  }
  if (m1 && m2) out.comparison = compare_methods(*m1, *m2);

  // coefficients.txt
  {
    std::ostringstream os;
    for (const auto& r : out.results) {
      os << r.fit.report(result_title(r), level);
      if (r.reference) {
        os << r.reference->label << ": " << fmt6(r.reference->estimate) << " ("
           << fmt6(r.reference->lower) << ", " << fmt6(r.reference->upper) << ")\n";
      }
      os << "\n";
    }
    write_text(out_dir / "coefficients.txt", os.str());
    out.files.push_back(out_dir / "coefficients.txt");
  }

  // balance.txt
  {
    std::ostringstream os;
    const auto covars = all_covariates(cfg.roles);
    const std::vector<double> ones(ctx.subject_table().n_rows(), 1.0);
    os << balance_report(
              diagnostics(ones, ctx.subject_table(), cfg.roles.treatment, &in.population, covars),
              "trial arms and population, unweighted")
       << "\n";
    for (const auto& r : out.results) {
      if (!r.weights) continue;
      if (r.weights->balance_before && r.method == Method::kWeighted) {
        os << balance_report(*r.weights->balance_before, "before within-trial weighting") << "\n";
      }
      os << balance_report(r.weights->balance, "weighted: " + result_title(r)) << "\n";
      for (const auto& w : r.weights->warnings) os << "# warning: " << w << "\n";
    }
    write_text(out_dir / "balance.txt", os.str());
    out.files.push_back(out_dir / "balance.txt");
  }

  write_text(out_dir / "sensitivity.csv", sensitivity_csv(out.results));
  write_text(out_dir / "sensitivity_plot.csv", sensitivity_plot_data(out.results));
  out.files.push_back(out_dir / "sensitivity.csv");
  out.files.push_back(out_dir / "sensitivity_plot.csv");

  {
    std::ostringstream os;
    for (const auto& w : in.warnings) os << "warning: " << w << "\n";
    for (const auto& n : in.coverage.notes) os << "coverage: " << n << "\n";
    os << sensitivity_summary(out.results);
    if (out.comparison) os << "\n" << out.comparison->summary;
    write_text(out_dir / "summary.txt", os.str());
    out.files.push_back(out_dir / "summary.txt");
  }

  if (cfg.svg) {
    write_text(out_dir / "sensitivity.svg", sensitivity_svg(out.results, "TATE sensitivity analysis"));
    out.files.push_back(out_dir / "sensitivity.svg");
    const SensitivityResult& first = out.results.front();
    write_text(out_dir / "group_effects.svg",
               group_effects_svg(group_effects(first.fit.model, first.tate, level),
                                 "Treatment effect by modifier group"));
    out.files.push_back(out_dir / "group_effects.svg");
  }
  return out;
}

ScanReport run_scan(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  const LoadedInputs in = load_inputs(cfg);
  const auto cols = cfg.scan_candidates.value_or(all_covariates(cfg.roles));
  std::vector<ScanCandidate> cands;
  if (cfg.scan_pairs) {
    cands = default_scan_candidates(in.context.subject_table(), cols);
  } else {
    for (const auto& c : cols) cands.push_back(ScanCandidate{c, {c}, false});
  }
  ScanReport rep = scan_effect_modifiers(in.context, cfg.outcome, cands, cfg.scan_threshold);
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "scan.txt", scan_report_text(rep));
  return rep;
}

std::vector<EvalReport> run_simulate(const std::vector<ScenarioSpec>& scenarios,
                                     const std::filesystem::path& out_dir) {
  std::vector<EvalReport> reports;
  std::ostringstream var;
  for (const auto& s : scenarios) {
    reports.push_back(evaluate(s));
    const EvalReport& r = reports.back();
    if (s.misspecification == Misspecification::kNone && r.mcse_defined) {
      const VarianceComparison v = variance_comparison(r);
      var << s.name << ": SD(M2)/SD(M1) = " << fmt6(v.sd_ratio)
          << ", mean model-based SE(M2)/SD(M2) = " << fmt6(v.model_based_ratio)
          << ", mean sandwich SE(M2)/SD(M2) = " << fmt6(v.sandwich_ratio) << "\n";
    }
  }
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "eval_report.csv", eval_report_csv(reports));
  write_text(out_dir / "variance.txt", var.str());
  return reports;
}

}  // namespace tatesens
