#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tatesens/error.hpp"
#include "tatesens/pipeline.hpp"

namespace ts = tatesens;

int main(int argc, char** argv) {
  CLI::App app{"Sensitivity analysis for generalizing trial effects to a target population"};
  app.require_subcommand(1);

  std::string config, method = "both", out, scenario;
  std::optional<std::size_t> reps;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;

  auto* analyze = app.add_subcommand("analyze", "fit, weight and run the sensitivity analysis");
  analyze->add_option("--config", config, "run configuration (JSON)")->required();
  analyze->add_option("--method", method, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
  analyze->add_option("--out", out, "output directory");

  auto* scan = app.add_subcommand("scan", "rank candidate effect modifiers");
  scan->add_option("--config", config, "run configuration (JSON)")->required();
  scan->add_option("--out", out, "output directory");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo evaluation of both methods");
  simulate->add_option("--scenario", scenario, "scenario file (JSON)")->required();
  simulate->add_option("--reps", reps, "replicates (overrides the scenario)");
  simulate->add_option("--seed", seed, "seed (overrides the scenario)");
  simulate->add_option("--threads", threads, "worker threads (0 = all cores)");
  simulate->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : ts::exit_code(ts::ErrorCategory::kUsage);
  }

  try {
    if (*analyze || *scan) {
      ts::RunConfig cfg = ts::load_run_config(config);
      std::filesystem::path dir = out.empty() ? cfg.output_dir : std::filesystem::path(out);
      if (dir.empty()) throw ts::usage_error("no output directory: pass --out or set output.dir");
      if (*analyze) {
        const auto res = ts::run_analyze(cfg, ts::method_choice_from_string(method), dir);
        for (const auto& f : res.files) std::cout << "wrote " << f.string() << "\n";
        if (res.comparison) std::cout << res.comparison->summary;
      } else {
        const auto rep = ts::run_scan(cfg, dir);
        std::cout << ts::scan_report_text(rep);
      }
    } else {
      auto specs = ts::load_scenarios(scenario);
      for (auto& s : specs) {
        if (reps) s.replicates = *reps;
        if (seed) s.seed = *seed;
        if (threads) s.threads = *threads;
        s.validate();
      }
      const auto reports = ts::run_simulate(specs, out);
      std::cout << ts::eval_report_csv(reports);
    }
  } catch (const ts::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return ts::exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
