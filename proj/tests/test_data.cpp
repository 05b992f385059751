#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>

#include "generators.hpp"
#include "tatesens/data.hpp"
#include "tatesens/error.hpp"

using namespace tatesens;

namespace {

TableSchema schema_abc() {
  TableSchema s;
  s.columns = {{"a", ColumnType::kNumeric, {}, {}},
               {"b", ColumnType::kBinary, {}, {}},
               {"c", ColumnType::kCategorical, {"lo", "hi"}, std::string("hi")}};
  return s;
}

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  FAIL("expected an error");
  return ErrorCategory::kSimulation;
}

}  // namespace

TEST_CASE("parse_table keeps schema columns, drops missing rows and sets the referent") {
  LoadReport rep;
  const DataTable t = parse_table("a,b,c,extra\n1.5,0,lo,x\nNA,1,hi,y\n3,1,hi,z\n", schema_abc(), &rep);
  CHECK(t.n_rows() == 2);
  CHECK(t.n_cols() == 3);
  CHECK(rep.rows_read == 3);
  CHECK(rep.rows_dropped == 1);
  const Column& c = t.column("c");
  CHECK(c.levels == std::vector<std::string>{"lo", "hi"});
  CHECK(c.levels[c.reference] == "hi");
  CHECK(c.level_of(1) == "hi");
}

TEST_CASE("parse_table validation failures") {
  CHECK(category_of([] { parse_table("", schema_abc()); }) == ErrorCategory::kValidation);
  CHECK(category_of([] { parse_table("a,b,c\n", schema_abc()); }) == ErrorCategory::kValidation);
  CHECK(category_of([] { parse_table("a,b,c\n1,2,lo\n", schema_abc()); }) ==
        ErrorCategory::kValidation);
  CHECK(category_of([] { parse_table("a,b,c\n1,0,mid\n", schema_abc()); }) ==
        ErrorCategory::kValidation);
  CHECK(category_of([] { parse_table("a,b\n1,0\n", schema_abc()); }) == ErrorCategory::kValidation);
  CHECK(category_of([] { parse_table("a,b,c\nNA,0,lo\n", schema_abc()); }) ==
        ErrorCategory::kValidation);
}

TEST_CASE("quoted csv fields") {
  TableSchema s;
  s.columns = {{"name", ColumnType::kCategorical, {}, {}}, {"v", ColumnType::kNumeric, {}, {}}};
  const DataTable t = parse_table("name,v\n\"a, b\",1\n\"c\"\"d\",2\n", s);
  CHECK(t.column("name").level_of(0) == "a, b");
  CHECK(t.column("name").level_of(1) == "c\"d");
}

TEST_CASE("write then load round trip") {
  gen::Rng r(3);
  std::vector<double> a, b, c;
  for (int i = 0; i < 50; ++i) {
    a.push_back(r.normal() * 1e3);
    b.push_back(r.coin() ? 1 : 0);
    c.push_back(r.integer(0, 1));
  }
  const DataTable t({numeric_column("a", a), binary_column("b", b),
                     categorical_column("c", {"lo", "hi"}, c, 1)});
  const auto path = std::filesystem::temp_directory_path() / "tatesens_roundtrip.csv";
  write_table(t, path.string());
  const DataTable u = load_table(path.string(), schema_abc());
  REQUIRE(u.n_rows() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(u.column("a").values[i] == t.column("a").values[i]);
    CHECK(u.column("b").values[i] == t.column("b").values[i]);
    CHECK(u.column("c").level_of(i) == t.column("c").level_of(i));
  }
  std::filesystem::remove(path);
  CHECK(category_of([] { load_table("/nonexistent/x.csv", schema_abc()); }) == ErrorCategory::kIo);
}

TEST_CASE("cross_classify labels and referent") {
  const DataTable t({categorical_column("race", {"White", "nonWhite"}, {0, 1, 1, 0}),
                     categorical_column("sis", {"noSIS", "SIS"}, {0, 0, 1, 1})});
  const DataTable u = cross_classify(t, {"race", "sis"}, "rs");
  const Column& c = u.column("rs");
  CHECK(c.level_of(0) == "White-noSIS");
  CHECK(c.level_of(1) == "nonWhite-noSIS");
  CHECK(c.level_of(2) == "nonWhite-SIS");
  CHECK(c.level_of(3) == "White-SIS");
  CHECK(c.levels[c.reference] == "White-noSIS");
  CHECK_THROWS_AS(cross_classify(t, {"race"}, "x"), Error);
}

TEST_CASE("stack_tables unifies levels and appends the indicator") {
  const DataTable a({categorical_column("g", {"x", "y"}, {0, 1}), numeric_column("v", {1, 2})});
  const DataTable b({categorical_column("g", {"y", "z"}, {1, 0, 0}), numeric_column("v", {3, 4, 5})});
  const DataTable s = stack_tables(a, b, {"g", "v"}, "S");
  REQUIRE(s.n_rows() == 5);
  CHECK(s.column("S").values == std::vector<double>{1, 1, 0, 0, 0});
  CHECK(s.column("g").level_of(2) == "z");
  CHECK(s.column("g").level_of(4) == "y");
  CHECK(s.column("v").values[4] == 5);
}

TEST_CASE("declare_roles builds the long table for pre/post outcomes") {
  const DataTable t({numeric_column("id", {1, 2, 3}), binary_column("A", {1, 0, 1}),
                     numeric_column("pre", {10, 20, 30}), numeric_column("post", {11, 19, 35})},
                    std::string("id"));
  VariableRoles r;
  r.treatment = "A";
  r.outcome = PrePostOutcome{"pre", "post"};
  const AnalysisContext ctx = declare_roles(t, r);
  CHECK(ctx.is_long());
  const DataTable& l = ctx.long_table();
  REQUIRE(l.n_rows() == 6);
  double sum_y = 0, sum_f = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    sum_y += l.column("Y").values[i];
    sum_f += l.column("F").values[i];
    const std::size_t s = ctx.long_to_subject()[i];
    const double want = l.column("F").values[i] == 1 ? t.column("post").values[s]
                                                     : t.column("pre").values[s];
    CHECK(l.column("Y").values[i] == want);
  }
  CHECK(sum_y == 125);
  CHECK(sum_f == 3);
}

TEST_CASE("declare_roles rejects bad roles") {
  const DataTable t({binary_column("A", {1, 1, 1}), numeric_column("y", {1, 2, 3}),
                     numeric_column("x", {1, 2, 3})});
  VariableRoles r;
  r.treatment = "A";
  r.outcome = SingleOutcome{"y"};
  CHECK_THROWS_AS(declare_roles(t, r), Error);  // single arm
  r.treatment = "x";
  CHECK_THROWS_AS(declare_roles(t, r), Error);  // not binary
  const DataTable u({binary_column("A", {1, 0, 1}), numeric_column("y", {1, 2, 3}),
                     numeric_column("x", {1, 2, 3})});
  r.treatment = "A";
  r.x_covars = {"x"};
  r.z_modifiers = {"x"};
  CHECK_THROWS_AS(declare_roles(u, r), Error);  // overlapping roles
}

TEST_CASE("summary statistics parsing and means") {
  const SummaryStats s = parse_summary_stats(
      "z_means.age = [40, 39, 41]\n"
      "[joint_cells]\n"
      "columns = female, race\n"
      "0, White = 0.3\n0, nonWhite = 0.4\n1, White = 0.1\n1, nonWhite = 0.2\n");
  const PopulationTarget p = PopulationTarget::summary(s);
  CHECK(p.mean("age").point == 40);
  CHECK(*p.mean("age").lo == 39);
  CHECK(p.mean("race=nonWhite").point == doctest::Approx(0.6));
  CHECK(p.mean("female=1").point == doctest::Approx(0.3));
  CHECK_THROWS_AS(p.mean("bmi"), Error);
  CHECK_THROWS_AS(parse_summary_stats("z_means.a = [1, 2]\n"), Error);
  CHECK_THROWS_AS(parse_summary_stats("[joint_cells]\ncolumns = a\nx = 0.5\n"), Error);
}

TEST_CASE("dataset population means") {
  const DataTable d({numeric_column("x", {1, 2, 3, 4}),
                     categorical_column("g", {"a", "b"}, {0, 1, 1, 1})});
  const PopulationTarget full = PopulationTarget::full_dataset(d);
  CHECK(full.mean("x").point == 2.5);
  CHECK_FALSE(full.mean("x").has_interval());
  CHECK(full.mean("g=b").point == 0.75);
  const PopulationTarget samp = PopulationTarget::representative_sample(d);
  const MeanEstimate m = samp.mean("x");
  REQUIRE(m.has_interval());
  const double se = std::sqrt((1.25 * 4 / 3) / 4);
  CHECK(*m.hi - m.point == doctest::Approx(1.959963984540054 * se).epsilon(1e-10));
}

TEST_CASE("coverage flags uncovered Z levels and numeric ranges") {
  const DataTable trial({numeric_column("age", {20, 30, 40}),
                         categorical_column("g", {"a", "b"}, {0, 0, 0})});
  const DataTable pop({numeric_column("age", {25, 45}), categorical_column("g", {"a", "b"}, {0, 1})});
  const PopulationTarget p = PopulationTarget::full_dataset(pop);
  const std::vector<std::string> mods = {"age", "g"};
  const CoverageReport r = check_modifier_coverage(trial, p, mods);
  CHECK_FALSE(r.ok());
  CHECK(r.flags.size() == 2);
  CHECK(r.items[1].uncovered_levels == std::vector<std::string>{"b"});
  const DataTable trimmed = trim_to_coverage(pop, trial, mods);
  REQUIRE(trimmed.n_rows() == 1);
  CHECK(trimmed.column("age").values[0] == 25);
}

TEST_CASE("key_values") {
  const DataTable d({categorical_column("g", {"a", "b"}, {0, 1, 1}), binary_column("f", {1, 0, 1})});
  CHECK(key_values(d, "g=b") == std::vector<double>{0, 1, 1});
  CHECK(key_values(d, "f") == std::vector<double>{1, 0, 1});
  CHECK_THROWS_AS(key_values(d, "g"), Error);
  CHECK_THROWS_AS(key_values(d, "g=c"), Error);
}
