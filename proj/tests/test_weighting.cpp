#include <doctest.h>

#include <cmath>
#include <numeric>

#include "generators.hpp"
#include "oracles.hpp"
#include "scenarios.hpp"
#include "tatesens/error.hpp"
#include "tatesens/weighting.hpp"

using namespace tatesens;

namespace {

DataTable two_by_two_trial() {
  // Cells (f, r) with trial shares 0.4, 0.1, 0.4, 0.1 over 20 rows.
  std::vector<double> f, r, a;
  auto add = [&](double fv, double rv, int count) {
    for (int i = 0; i < count; ++i) {
      f.push_back(fv);
      r.push_back(rv);
      a.push_back(i % 2);
    }
  };
  add(0, 0, 8);
  add(0, 1, 2);
  add(1, 0, 8);
  add(1, 1, 2);
  return DataTable({binary_column("A", a), binary_column("f", f),
                    categorical_column("r", {"W", "N"}, r)});
}

JointCells quarter_cells() {
  JointCells jc;
  jc.columns = {"f", "r"};
  jc.probability = {{{"0", "W"}, 0.25}, {{"0", "N"}, 0.25}, {{"1", "W"}, 0.25}, {{"1", "N"}, 0.25}};
  return jc;
}

}  // namespace

TEST_CASE("ratio of probability on a 2x2 table") {
  const DataTable t = two_by_two_trial();
  const WeightSet ws = weight_ratio_of_probability(t, quarter_cells(), {"f", "r"});
  for (std::size_t i = 0; i < t.n_rows(); ++i) {
    const bool rare = t.column("r").values[i] == 1;
    CHECK(ws.weights[i] == doctest::Approx(rare ? 2.5 : 0.625).epsilon(1e-14));
  }
}

TEST_CASE("ratio of probability with matched cells gives unit weights exactly") {
  const DataTable t = two_by_two_trial();
  JointCells jc;
  jc.columns = {"f", "r"};
  jc.probability = {{{"0", "W"}, 0.4}, {{"0", "N"}, 0.1}, {{"1", "W"}, 0.4}, {{"1", "N"}, 0.1}};
  const WeightSet ws = weight_ratio_of_probability(t, jc, {"f", "r"});
  for (double w : ws.weights) CHECK(w == 1.0);
}

TEST_CASE("ratio of probability coverage and validation failures") {
  const DataTable t = two_by_two_trial();
  JointCells extra = quarter_cells();
  extra.columns = {"f", "r"};
  // Population cell with no trial rows.
  DataTable small = t.select_rows(std::vector<std::size_t>{0, 1, 8, 9, 10});
  try {
    weight_ratio_of_probability(small, extra, {"f", "r"});
    FAIL("expected coverage error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kCoverage);
  }
  // Trial cell absent from the population.
  JointCells missing;
  missing.columns = {"f", "r"};
  missing.probability = {{{"0", "W"}, 0.5}, {{"1", "W"}, 0.5}};
  try {
    weight_ratio_of_probability(t, missing, {"f", "r"});
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kValidation);
  }
}

TEST_CASE("weighting by the odds matches a standalone stacked logistic") {
  gen::Rng r(5);
  std::vector<double> tx, tz, px, pz, a;
  oracle::Mat trow, prow;
  for (int i = 0; i < 150; ++i) {
    tx.push_back(r.normal(0.5, 1));
    tz.push_back(r.coin(0.6) ? 1 : 0);
    a.push_back(i % 2);
    trow.push_back({1.0, tx.back(), tz.back()});
  }
  for (int i = 0; i < 400; ++i) {
    px.push_back(r.normal());
    pz.push_back(r.coin(0.4) ? 1 : 0);
    prow.push_back({1.0, px.back(), pz.back()});
  }
  const DataTable t({binary_column("A", a), numeric_column("x", tx), binary_column("z", tz)});
  const DataTable p({numeric_column("x", px), binary_column("z", pz)});
  const WeightSet ws = weight_by_odds(t, PopulationTarget::full_dataset(p), {"x", "z"});
  const auto want = oracle::odds_weights(trow, prow);
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(ws.weights[i] == doctest::Approx(want[i]).epsilon(1e-9));
  }
  CHECK(ws.ess == doctest::Approx(effective_sample_size(ws.weights)));
}

TEST_CASE("odds weights balance identical distributions") {
  int good = 0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto d = scen::identical(s, 1000);
    WeightOptions o;
    o.treatment = "A";
    const WeightSet ws =
        weight_by_odds(d.trial, PopulationTarget::full_dataset(d.pop), {"X", "Z"}, o);
    bool ok = true;
    for (const auto& row : ws.balance.rows) ok = ok && row.std_diff_population.value_or(0) < 0.05;
    good += ok ? 1 : 0;
  }
  CHECK(good >= 4);
}

TEST_CASE("odds weighting refuses a population level the trial lacks") {
  const DataTable t({binary_column("A", {0, 1, 0, 1}), categorical_column("g", {"a", "b"}, {0, 0, 0, 0})});
  const DataTable p({categorical_column("g", {"a", "b"}, {0, 1, 1})});
  try {
    weight_by_odds(t, PopulationTarget::full_dataset(p), {"g"});
    FAIL("expected coverage error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kCoverage);
  }
}

TEST_CASE("inverse probability weights follow trial row order") {
  gen::Rng r(6);
  std::vector<double> id, x, m, tid, tx, ta;
  for (int i = 0; i < 300; ++i) {
    id.push_back(i);
    x.push_back(r.normal());
    m.push_back(r.coin(1 / (1 + std::exp(-(-1 + 0.8 * x.back())))) ? 1 : 0);
  }
  for (int i = 299; i >= 0; --i) {
    if (m[static_cast<std::size_t>(i)] == 1) {
      tid.push_back(i);
      tx.push_back(x[static_cast<std::size_t>(i)]);
      ta.push_back(static_cast<double>(tid.size() % 2));
    }
  }
  const DataTable pop({numeric_column("id", id), numeric_column("x", x), binary_column("S", m)});
  const DataTable trial({numeric_column("id", tid), binary_column("A", ta), numeric_column("x", tx)},
                        std::string("id"));
  const PopulationTarget pt = PopulationTarget::full_dataset(pop, true, std::string("S"));
  const WeightSet ws = weight_inverse_probability(pt, {"x"}, {}, &trial);
  oracle::Mat rows;
  for (std::size_t i = 0; i < x.size(); ++i) rows.push_back({1.0, x[i]});
  const auto b = oracle::newton_glm(rows, m, 0);
  for (std::size_t k = 0; k < tid.size(); ++k) {
    const double ps = 1 / (1 + std::exp(-(b[0] + b[1] * tx[k])));
    CHECK(ws.weights[k] == doctest::Approx(1 / ps).epsilon(1e-9));
    CHECK(ws.population_rows[k] == static_cast<std::size_t>(tid[k]));
  }
  CHECK(select_population_procedure(pt) == WeightProcedure::kInverseProbability);
  CHECK_THROWS_AS(weight_by_odds(trial, pt, {"x"}), Error);
}

TEST_CASE("within-trial weights are normalized per arm") {
  const auto d = scen::trial_only_v(3, 800);
  const WeightSet ws = adjust_within_trial_balance(d.trial, "A", {"X", "Z", "V"});
  const auto& a = d.trial.column("A").values;
  double s[2] = {0, 0}, c[2] = {0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    s[a[i] != 0 ? 1 : 0] += ws.weights[i];
    c[a[i] != 0 ? 1 : 0] += 1;
  }
  CHECK(s[0] == doctest::Approx(c[0]).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(c[1]).epsilon(1e-12));
  REQUIRE(ws.balance_before.has_value());
  CHECK(ws.balance.row("V").std_diff_arms < ws.balance_before->row("V").std_diff_arms);
}

TEST_CASE("two-step keeps arms balanced on trial-only V, per-arm weighting does not") {
  const auto d = scen::trial_only_v(21, 5000);
  const PopulationTarget p = PopulationTarget::full_dataset(d.pop);
  const WeightSet two = compose_two_step(d.trial, p, "A", {"X", "Z"}, {"X", "Z", "V"});
  const WeightSet sep = weight_each_arm_separately(d.trial, p, "A", {"X", "Z"});
  const BalanceTable bt = diagnostics(two.weights, d.trial, "A", &p, {"X", "Z", "V"});
  const BalanceTable bs = diagnostics(sep.weights, d.trial, "A", &p, {"X", "Z", "V"});
  CHECK(bt.row("V").std_diff_arms < 0.03);
  CHECK(bs.row("V").std_diff_arms >= 0.03);
  CHECK(two.within_trial_adjusted);
  // The product of the two steps, not either alone.
  const WeightSet step1 = adjust_within_trial_balance(d.trial, "A", {"X", "Z", "V"});
  WeightOptions o;
  o.base_weights = step1.weights;
  const WeightSet step2 = weight_by_odds(d.trial, p, {"X", "Z"}, o);
  for (std::size_t i = 0; i < 50; ++i) CHECK(two.weights[i] == doctest::Approx(step2.weights[i]));
}

TEST_CASE("ess and warnings") {
  CHECK(effective_sample_size(std::vector<double>{1, 1, 1, 1}) == 4.0);
  CHECK(effective_sample_size(std::vector<double>{2, 0, 0, 0}) == 1.0);
  const DataTable t = two_by_two_trial();
  JointCells jc = quarter_cells();
  jc.probability = {{{"0", "W"}, 0.01}, {{"0", "N"}, 0.49}, {{"1", "W"}, 0.01}, {{"1", "N"}, 0.49}};
  const WeightSet ws = weight_ratio_of_probability(t, jc, {"f", "r"});
  CHECK_FALSE(ws.warnings.empty());
}

TEST_CASE("summary population without joint cells cannot be weighted to") {
  SummaryStats s;
  s.z_means["x"] = MeanEstimate{0.5, {}, {}};
  CHECK_THROWS_AS(select_population_procedure(PopulationTarget::summary(s)), Error);
}

TEST_CASE("balance report layout") {
  const auto d = scen::identical(4, 200);
  const std::vector<double> ones(200, 1.0);
  const PopulationTarget p = PopulationTarget::full_dataset(d.pop);
  const std::string txt = balance_report(diagnostics(ones, d.trial, "A", &p, {"X", "Z", "V"}), "t");
  CHECK(txt.find("covariate,treated,control,trial,population,std_diff_arms,std_diff_population") !=
        std::string::npos);
  CHECK(txt.find("V,") != std::string::npos);
  CHECK(txt.find("not available") != std::string::npos);
}
