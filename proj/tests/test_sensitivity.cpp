#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "generators.hpp"
#include "oracles.hpp"
#include "tatesens/error.hpp"
#include "tatesens/sensitivity.hpp"
#include "tatesens/simulation.hpp"

using namespace tatesens;

namespace {

// A fitted model with chosen coefficients and a random positive definite
// covariance.
FittedModel synthetic_model(gen::Rng& r, const std::vector<double>& coef) {
  FittedModel m;
  m.names = {"(Intercept)", "A", "Z", "A:Z", "V", "A:V"};
  const auto p = static_cast<Eigen::Index>(m.names.size());
  m.coef = Eigen::Map<const Eigen::VectorXd>(coef.data(), p);
  Eigen::MatrixXd b(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) b(i, j) = r.normal(0, 0.3);
  }
  m.vcov = b * b.transpose() + 0.01 * Eigen::MatrixXd::Identity(p, p);
  return m;
}

TateSpec simple_spec() {
  TateSpec s;
  s.treatment_coefficient = "A";
  s.terms = {{"A:Z", {MeanFactor::parse("z:Z")}}, {"A:V", {MeanFactor::parse("v:V")}}};
  return s;
}

AnalysisContext simulated_context(const Replicate& rep) {
  VariableRoles roles;
  roles.treatment = "A";
  roles.outcome = SingleOutcome{"Y"};
  roles.x_covars = {"X"};
  roles.z_modifiers = {"Z"};
  roles.v_modifiers = {"V"};
  return declare_roles(rep.trial, roles);
}

OutcomeModelSpec linear_outcome() {
  OutcomeModelSpec o;
  for (const char* t : {"A", "X", "Z", "A:Z", "V", "A:V"}) o.model.terms.push_back(Term::parse(t));
  return o;
}

}  // namespace

TEST_CASE("mean factor text round trip") {
  for (const char* s : {"z:race=nonWhite", "1-v:sis=SIS", "v:V", "1-z:Z"}) {
    CHECK(MeanFactor::parse(s).text() == s);
  }
  CHECK(MeanFactor::parse("1-v:sis=SIS").complement);
  CHECK_THROWS_AS(MeanFactor::parse("q:Z"), Error);
}

TEST_CASE("tate_point is affine in ev") {
  gen::Rng r(1);
  for (int t = 0; t < 50; ++t) {
    const FittedModel m = synthetic_model(r, {r.normal(), r.normal(), r.normal(), r.normal(),
                                              r.normal(), r.normal()});
    const MeanMap z{{"Z", r.normal()}};
    const double a = r.normal(), b = r.normal(), lam = r.uniform();
    const auto f = [&](double v) { return tate_point(m, simple_spec(), z, {{"V", v}}).estimate; };
    CHECK(std::fabs(f(lam * a + (1 - lam) * b) - (lam * f(a) + (1 - lam) * f(b))) < 1e-10);
  }
}

TEST_CASE("no V interaction gives a flat line") {
  gen::Rng r(2);
  const FittedModel m = synthetic_model(r, {0.3, 1.2, 0.4, -0.7, 0.9, 0.0});
  const MeanMap z{{"Z", 0.35}};
  const double base = tate_point(m, simple_spec(), z, {{"V", 0.0}}).estimate;
  for (double v : {-3.0, 0.5, 2.0, 40.0}) {
    CHECK(std::fabs(tate_point(m, simple_spec(), z, {{"V", v}}).estimate - base) < 1e-12);
  }
}

TEST_CASE("odds-ratio scale is the exponential of the log-odds-ratio scale") {
  gen::Rng r(3);
  const FittedModel m = synthetic_model(r, {0.1, 0.5, 0.2, -0.3, 0.1, 0.4});
  const LinComResult lr = tate_point(m, simple_spec(), {{"Z", 0.4}}, {{"V", 0.6}});
  const LinComResult logor = on_scale(lr, EffectScale::kLogOr);
  const LinComResult orr = on_scale(lr, EffectScale::kOr);
  CHECK(orr.estimate == std::exp(logor.estimate));
  CHECK(orr.lower == std::exp(logor.lower));
  CHECK(orr.upper == std::exp(logor.upper));
  CHECK(orr.std_error == logor.std_error);
  CHECK_THROWS_AS(check_scale(EffectScale::kOr, Link::kIdentity, Family::kGaussian), Error);
  CHECK_NOTHROW(check_scale(EffectScale::kRr, Link::kLog, Family::kBinomial));
}

TEST_CASE("trial means reproduce the model-implied SATE") {
  ScenarioSpec sp;
  sp.n_trial = 400;
  sp.n_pop = 100;
  const Replicate rep = generate_replicate(sp, 0);
  const AnalysisContext ctx = simulated_context(rep);
  const OutcomeFit fit = fit_outcome_model(ctx, linear_outcome());
  // Average over trial rows of the predicted difference with A set to 1 and 0.
  const DataTable& t = rep.trial;
  std::vector<double> ones(t.n_rows(), 1.0), zeros(t.n_rows(), 0.0);
  auto with_a = [&](const std::vector<double>& a) {
    return DataTable({binary_column("A", a), t.column("X"), t.column("Z"), t.column("V"), t.column("Y")});
  };
  ModelSpec ms = linear_outcome().model;
  const Design d1 = expand_terms(with_a(ones), ms.terms, true);
  const Design d0 = expand_terms(with_a(zeros), ms.terms, true);
  const Eigen::VectorXd diff = (d1.x - d0.x) * fit.model.coef;
  const double sate = diff.mean();
  double zbar = 0, vbar = 0;
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    zbar += t.column("Z").values[i] / static_cast<double>(t.n_rows());
    vbar += t.column("V").values[i] / static_cast<double>(t.n_rows());
  }
  const LinComResult lr = tate_point(fit.model, simple_spec(), {{"Z", zbar}}, {{"V", vbar}});
  CHECK(std::fabs(lr.estimate - sate) < 1e-10);
}

TEST_CASE("zero-width ez interval gives the single lincom interval") {
  gen::Rng r(4);
  const FittedModel m = synthetic_model(r, {0.2, 1.0, 0.5, 0.8, -0.2, 0.3});
  const std::map<std::string, MeanEstimate> ez{{"Z", MeanEstimate{2.0, 2.0, 2.0}}};
  const TateInterval ti = tate_ci(m, simple_spec(), ez, {{"V", 30.0}});
  const LinComResult lr = tate_point(m, simple_spec(), {{"Z", 2.0}}, {{"V", 30.0}});
  CHECK(ti.lower == lr.lower);
  CHECK(ti.upper == lr.upper);
  CHECK(ti.corners == 0);
}

TEST_CASE("corner interval takes the more extreme limits of the two corner lincoms") {
  gen::Rng r(5);
  for (int t = 0; t < 20; ++t) {
    const FittedModel m = synthetic_model(r, {r.normal(), r.normal(), r.normal(), r.normal(),
                                              r.normal(), r.normal()});
    const std::map<std::string, MeanEstimate> ez{{"Z", MeanEstimate{2.0, 1.5, 2.5}}};
    const TateInterval ti = tate_ci(m, simple_spec(), ez, {{"V", 30.0}});
    const LinComResult lo = tate_point(m, simple_spec(), {{"Z", 1.5}}, {{"V", 30.0}});
    const LinComResult hi = tate_point(m, simple_spec(), {{"Z", 2.5}}, {{"V", 30.0}});
    CHECK(ti.lower == std::min(lo.lower, hi.lower));
    CHECK(ti.upper == std::max(lo.upper, hi.upper));
    CHECK(ti.corners == 2);
    CHECK(ti.at_point.estimate == tate_point(m, simple_spec(), {{"Z", 2.0}}, {{"V", 30.0}}).estimate);
  }
}

TEST_CASE("multi-factor terms use the product of means") {
  TateSpec s;
  s.treatment_coefficient = "F:A";
  s.terms = {{"b1", {MeanFactor::parse("z:race=nonWhite"), MeanFactor::parse("1-v:sis=SIS")}},
             {"b2", {MeanFactor::parse("1-z:race=nonWhite"), MeanFactor::parse("v:sis=SIS")}},
             {"b3", {MeanFactor::parse("z:race=nonWhite"), MeanFactor::parse("v:sis=SIS")}}};
  const Combination c = tate_combination(s, {{"race=nonWhite", 0.64}}, {{"sis=SIS", 0.3}});
  REQUIRE(c.size() == 4);
  CHECK(c[0].second == 1.0);
  CHECK(c[1].second == doctest::Approx(0.64 * 0.7));
  CHECK(c[2].second == doctest::Approx(0.36 * 0.3));
  CHECK(c[3].second == doctest::Approx(0.64 * 0.3));
  CHECK(s.z_keys() == std::vector<std::string>{"race=nonWhite"});
  CHECK(s.v_keys() == std::vector<std::string>{"sis=SIS"});
}

TEST_CASE("derive_tate_spec finds every treatment interaction") {
  gen::Rng r(6);
  const FittedModel m = synthetic_model(r, {0, 1, 0, 1, 0, 1});
  const TateSpec s = derive_tate_spec(m, {"A"}, {"Z"}, {"V"});
  CHECK(s.treatment_coefficient == "A");
  REQUIRE(s.terms.size() == 2);
  CHECK(s.terms[0].coefficient == "A:Z");
  CHECK(s.terms[0].factors[0].text() == "z:Z");
  CHECK(s.terms[1].factors[0].text() == "v:V");
}

TEST_CASE("missing coefficients are reported") {
  gen::Rng r(7);
  const FittedModel m = synthetic_model(r, {0, 1, 0, 1, 0, 1});
  TateSpec s = simple_spec();
  s.terms.push_back({"A:W", {MeanFactor::parse("z:W")}});
  CHECK_THROWS_AS(tate_point(m, s, {{"Z", 0}, {"W", 0}}, {{"V", 0}}), Error);
}

TEST_CASE("sensitivity grid endpoints are exact") {
  const auto g = sensitivity_grid(0.2, 0.6, 9);
  REQUIRE(g.size() == 9);
  CHECK(g.front() == 0.2);
  CHECK(g.back() == 0.6);
  for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
}

TEST_CASE("both methods on simulated data") {
  ScenarioSpec sp;
  sp.n_trial = 600;
  sp.n_pop = 3000;
  const Replicate rep = generate_replicate(sp, 3);
  const AnalysisContext ctx = simulated_context(rep);
  const PopulationTarget pop = PopulationTarget::full_dataset(rep.population);
  SensitivityConfig cfg;
  cfg.ev_range["V"] = {-0.5, 0.5};
  cfg.sweep_axis = "V";
  cfg.grid_points = 5;
  const SensitivityResult m1 = run_method1(ctx, pop, linear_outcome(), std::nullopt, cfg);
  WeightPlan plan;
  plan.two_step.adjust_within_trial = false;
  const SensitivityResult m2 = run_method2(ctx, pop, linear_outcome(), std::nullopt, cfg, plan);
  REQUIRE(m1.rows.size() == 5);
  REQUIRE(m2.rows.size() == 5);
  // Line slope equals the fitted A:V coefficient.
  const double slope1 = (m1.rows.back().estimate - m1.rows.front().estimate) / 1.0;
  CHECK(slope1 == doctest::Approx(m1.fit.model.coefficient("A:V")).epsilon(1e-10));
  CHECK(m1.ez_used.at("Z").point == doctest::Approx(pop.mean("Z").point));
  for (const auto& row : m2.rows) {
    CHECK(row.lower <= row.estimate);
    CHECK(row.estimate <= row.upper);
  }
  CHECK(m2.fit.model.vcov_kind == VcovKind::kSandwich);
  const MethodComparison cmp = compare_methods(m1, m2);
  CHECK(cmp.summary.find("ev=") != std::string::npos);

  const std::vector<SensitivityResult> both{m1, m2};
  const std::string csv = sensitivity_csv(both);
  CHECK(csv.rfind("ev_value,estimate,lower,upper,method,scale\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  CHECK(csv.find(",M1,ADDITIVE") != std::string::npos);
  CHECK(csv.find(",M2,ADDITIVE") != std::string::npos);
  const std::string plot = sensitivity_plot_data(both);
  CHECK(std::count(plot.begin(), plot.end(), '\n') == 1 + 2 * 3 * 5);
}

TEST_CASE("no modifiers gives the ATE only") {
  ScenarioSpec sp;
  sp.n_trial = 300;
  sp.n_pop = 300;
  const Replicate rep = generate_replicate(sp, 1);
  VariableRoles roles;
  roles.treatment = "A";
  roles.outcome = SingleOutcome{"Y"};
  roles.x_covars = {"X"};
  const AnalysisContext ctx = declare_roles(rep.trial, roles);
  OutcomeModelSpec o;
  o.model.terms = {Term::parse("A"), Term::parse("X")};
  const SensitivityResult res =
      run_method1(ctx, PopulationTarget::full_dataset(rep.population), o, std::nullopt, SensitivityConfig{});
  REQUIRE(res.rows.size() == 1);
  CHECK(std::isnan(res.rows[0].ev_value));
  CHECK(res.rows[0].estimate == doctest::Approx(res.fit.model.coefficient("A")));
}

TEST_CASE("unobserved modifiers are refused") {
  try {
    reject_unobserved_in_trial(std::vector<std::string>{"A", "Y", "Z"}, {"Z", "U"});
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kUnobservedModifier);
    CHECK(std::string(e.what()).find("U") != std::string::npos);
  }
  CHECK_NOTHROW(reject_unobserved_in_trial(std::vector<std::string>{"A", "Z"}, {"Z"}));
}

TEST_CASE("scan ranks the true modifier first") {
  ScenarioSpec sp;
  sp.n_trial = 800;
  sp.n_pop = 100;
  sp.bza = 0.0;
  sp.bva = 1.0;
  const Replicate rep = generate_replicate(sp, 2);
  const AnalysisContext ctx = simulated_context(rep);
  OutcomeModelSpec base;
  base.model.terms = {Term::parse("A")};
  const std::vector<ScanCandidate> cands{{"X", {"X"}, false}, {"Z", {"Z"}, false}, {"V", {"V"}, false}};
  const ScanReport rep2 = scan_effect_modifiers(ctx, base, cands);
  REQUIRE(rep2.rows.size() == 3);
  CHECK(rep2.rows[0].candidate == "V");
  CHECK(rep2.rows[0].flagged);
  CHECK(scan_report_text(rep2).find("V") != std::string::npos);
  const ScanReport empty = scan_effect_modifiers(ctx, base, {});
  CHECK(empty.rows.empty());
}

namespace {

// Fraction of seeded runs where the scan flags candidate N.
double flag_rate(double bva, std::size_t n, int runs, std::uint64_t seed0, bool use_v) {
  int flagged = 0;
  for (int k = 0; k < runs; ++k) {
    ScenarioSpec sp;
    sp.n_trial = n;
    sp.n_pop = 50;
    sp.bza = 0.0;
    sp.bva = bva;
    sp.seed = seed0;
    const Replicate rep = generate_replicate(sp, static_cast<std::uint64_t>(k));
    gen::Rng r(seed0 * 7919 + static_cast<std::uint64_t>(k));
    std::vector<double> noise(rep.trial.n_rows());
    for (double& v : noise) v = r.normal();
    const DataTable t = rep.trial.with_column(numeric_column("N", noise));
    VariableRoles roles;
    roles.treatment = "A";
    roles.outcome = SingleOutcome{"Y"};
    roles.x_covars = {"X"};
    const AnalysisContext ctx = declare_roles(t, roles);
    OutcomeModelSpec base;
    base.model.terms = {Term::parse("A"), Term::parse("X")};
    const std::string col = use_v ? "V" : "N";
    const ScanReport rep2 = scan_effect_modifiers(ctx, base, {{col, {col}, false}});
    flagged += rep2.rows.at(0).flagged ? 1 : 0;
  }
  return static_cast<double>(flagged) / runs;
}

}  // namespace

TEST_CASE("scan leaves a pure-noise candidate unflagged in most null runs") {
  CHECK(1.0 - flag_rate(0.0, 300, 400, 41, false) >= 0.93);
}

TEST_CASE("scan finds a planted interaction") {
  CHECK(flag_rate(0.6, 400, 50, 43, true) >= 0.9);
}
