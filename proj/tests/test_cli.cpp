#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const std::string& log = "/dev/null") {
  const std::string cmd = std::string(TATESENS_BIN) + " " + args + " >" + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("tatesens_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Illustration data plus the shipped config, placed as configs/ and data/.
fs::path illustration_tree(const std::string& name) {
  const fs::path d = scratch(name);
  fs::create_directories(d / "configs");
  const std::string cmd = std::string(MAKE_DATA_BIN) + " --out " + (d / "data").string() + " >/dev/null";
  REQUIRE(std::system(cmd.c_str()) == 0);
  for (const char* f : {"illustration.json", "illustration_summary.json"}) {
    fs::copy_file(fs::path(SOURCE_DIR) / "configs" / f, d / "configs" / f);
  }
  return d;
}

const char* kSmallTrial =
    "A,X,Z,V,Y\n"
    "1,0.1,0,0.5,1.2\n0,0.4,1,0.1,0.3\n1,-0.3,1,-0.2,2.1\n0,0.9,0,0.3,0.1\n"
    "1,0.2,1,0.8,1.9\n0,-0.5,0,-0.4,-0.2\n1,1.1,0,0.2,1.0\n0,0.0,1,0.6,0.7\n"
    "1,-0.8,1,-0.1,1.5\n0,0.3,0,0.0,0.2\n1,0.6,0,0.4,1.4\n0,-0.2,1,-0.3,0.4\n";

std::string small_config(const std::string& extra_roles, const std::string& terms) {
  return R"({
  "trial": {"path": "trial.csv", "columns": {"A": "binary", "X": "numeric", "Z": "binary", "V": "numeric", "Y": "numeric"}},
  "population": {"kind": "full_dataset", "path": "pop.csv", "columns": {"X": "numeric", "Z": "binary"}},
  "roles": {"treatment": "A", "outcome": {"type": "single", "column": "Y"}, "x": ["X"])" +
         extra_roles + R"(},
  "model": {"terms": )" + terms + R"(},
  "output": {"dir": "out", "svg": false}
})";
}

fs::path small_tree(const std::string& name, const std::string& config,
                    const std::string& pop = "X,Z\n0.1,0\n-0.2,1\n0.5,1\n0.0,0\n") {
  const fs::path d = scratch(name);
  spit(d / "trial.csv", kSmallTrial);
  spit(d / "pop.csv", pop);
  spit(d / "config.json", config);
  return d;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("analyze") == 2);
  CHECK(run("analyze --config x.json --method 3") == 2);
  const fs::path d = small_tree("usage", R"({"trial": {}, "bogus": 1})");
  CHECK(run("analyze --config " + (d / "config.json").string()) == 2);
}

TEST_CASE("io errors exit 3") {
  CHECK(run("analyze --config /nonexistent/config.json") == 3);
  const fs::path d = small_tree("io", small_config("", R"(["A", "X"])"));
  fs::remove(d / "trial.csv");
  CHECK(run("analyze --config " + (d / "config.json").string()) == 3);
}

TEST_CASE("validation errors exit 4") {
  const fs::path d = small_tree("validation", small_config("", R"(["A", "X"])"));
  spit(d / "trial.csv", "A,X,Z,V,Y\n2,0.1,0,0.5,1.2\n0,0.4,1,0.1,0.3\n");
  CHECK(run("analyze --config " + (d / "config.json").string()) == 4);
}

TEST_CASE("coverage errors exit 5") {
  // Z categorical with a population level the trial never shows.
  const std::string cfg = R"({
  "trial": {"path": "trial.csv", "columns": {"A": "binary", "X": "numeric", "Z": {"type": "categorical", "levels": ["0", "1", "2"]}, "V": "numeric", "Y": "numeric"}},
  "population": {"kind": "full_dataset", "path": "pop.csv", "columns": {"X": "numeric", "Z": {"type": "categorical", "levels": ["0", "1", "2"]}}},
  "roles": {"treatment": "A", "outcome": {"type": "single", "column": "Y"}, "x": ["X"], "z": ["Z"]},
  "model": {"terms": ["A", "X", "Z", "A:Z"]},
  "output": {"dir": "out", "svg": false}
})";
  const fs::path d = small_tree("coverage", cfg, "X,Z\n0.1,0\n-0.2,2\n0.5,1\n");
  CHECK(run("analyze --config " + (d / "config.json").string()) == 5);
}

TEST_CASE("fit errors exit 6") {
  const fs::path d = small_tree("fit", small_config("", R"(["A", "X", "X:A", "A:X"])"));
  CHECK(run("analyze --config " + (d / "config.json").string()) == 6);
}

TEST_CASE("unobserved modifiers exit 7 with an explanation") {
  const fs::path d = small_tree("unobserved", small_config(R"(, "v": ["U"])", R"(["A", "X"])"));
  const fs::path log = d / "log.txt";
  CHECK(run("analyze --config " + (d / "config.json").string(), log.string()) == 7);
  CHECK(slurp(log).find("'U'") != std::string::npos);
}

TEST_CASE("invalid scenarios exit 8") {
  const fs::path d = scratch("simerr");
  spit(d / "s.json", R"({"n_trial": 5})");
  CHECK(run("simulate --scenario " + (d / "s.json").string() + " --out " + (d / "o").string()) == 8);
}

TEST_CASE("no modifiers reports the ATE only") {
  const fs::path d = small_tree("ate", small_config("", R"(["A", "X"])"));
  REQUIRE(run("analyze --config " + (d / "config.json").string() + " --method 1") == 0);
  const std::string csv = slurp(d / "out" / "sensitivity.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.find(",NA,") == std::string::npos);
  CHECK(fs::exists(d / "out" / "coefficients.txt"));
}

TEST_CASE("simulate is byte-identical across runs with one seed") {
  const fs::path d = scratch("determinism");
  spit(d / "s.json", R"([{"name": "a", "n_trial": 200, "n_pop": 1000},
                          {"name": "b", "misspecification": "Z_MISSPEC", "bzza": 1, "n_trial": 200, "n_pop": 1000}])");
  const std::string base = "simulate --scenario " + (d / "s.json").string() + " --reps 20";
  REQUIRE(run(base + " --seed 9 --threads 1 --out " + (d / "o1").string()) == 0);
  REQUIRE(run(base + " --seed 9 --threads 3 --out " + (d / "o2").string()) == 0);
  for (const char* f : {"eval_report.csv", "variance.txt"}) {
    CHECK(slurp(d / "o1" / f) == slurp(d / "o2" / f));
  }
  CHECK(!slurp(d / "o1" / "eval_report.csv").empty());
  REQUIRE(run(base + " --seed 10 --out " + (d / "o3").string()) == 0);
  CHECK(slurp(d / "o1" / "eval_report.csv") != slurp(d / "o3" / "eval_report.csv"));
}

TEST_CASE("single replicate run flags the MCSE") {
  const fs::path d = scratch("onerep");
  spit(d / "s.json", R"({"n_trial": 200, "n_pop": 1000})");
  REQUIRE(run("simulate --scenario " + (d / "s.json").string() + " --reps 1 --out " + (d / "o").string()) == 0);
  CHECK(slurp(d / "o" / "eval_report.csv").find("MCSE undefined") != std::string::npos);
}

TEST_CASE("illustration pipeline writes every output") {
  const fs::path d = illustration_tree("illustration");
  const fs::path out = d / "out";
  REQUIRE(run("analyze --config " + (d / "configs" / "illustration.json").string() + " --method both --out " +
              out.string()) == 0);
  for (const char* f : {"coefficients.txt", "balance.txt", "sensitivity.csv", "sensitivity_plot.csv",
                        "summary.txt", "sensitivity.svg", "group_effects.svg"}) {
    CHECK(fs::exists(out / f));
  }
  const std::string csv = slurp(out / "sensitivity.csv");
  CHECK(csv.find(",M1,ADDITIVE") != std::string::npos);
  CHECK(csv.find(",M2,ADDITIVE") != std::string::npos);
  CHECK(slurp(out / "sensitivity.svg").rfind("<svg", 0) == 0);
  // Deterministic outputs.
  const fs::path out2 = d / "out2";
  REQUIRE(run("analyze --config " + (d / "configs" / "illustration.json").string() + " --method both --out " +
              out2.string()) == 0);
  CHECK(slurp(out / "sensitivity.csv") == slurp(out2 / "sensitivity.csv"));
  CHECK(slurp(out / "coefficients.txt") == slurp(out2 / "coefficients.txt"));
}

TEST_CASE("scan on the illustration and with no candidates") {
  const fs::path d = illustration_tree("scan");
  const fs::path cfg = d / "configs" / "illustration.json";
  REQUIRE(run("scan --config " + cfg.string() + " --out " + (d / "o").string()) == 0);
  CHECK(fs::exists(d / "o" / "scan.txt"));
  std::string text = slurp(cfg);
  text.replace(text.rfind('}'), 1, R"(, "scan": {"candidates": []}})");
  spit(d / "configs" / "empty.json", text);
  REQUIRE(run("scan --config " + (d / "configs" / "empty.json").string() + " --out " + (d / "e").string()) == 0);
}

TEST_CASE("summary statistics population") {
  const fs::path d = illustration_tree("summary");
  REQUIRE(run("analyze --config " + (d / "configs" / "illustration_summary.json").string() + " --method 2 --out " +
              (d / "o").string()) == 0);
  const std::string bal = slurp(d / "o" / "balance.txt");
  CHECK(bal.find("race=nonWhite") != std::string::npos);
  CHECK(slurp(d / "o" / "sensitivity.csv").find(",M2,ADDITIVE") != std::string::npos);
}
