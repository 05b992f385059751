#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tatesens/error.hpp"
#include "tatesens/illustration.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic illustration trial and population"};
  std::string out = "data";
  std::uint64_t seed = 933;
  app.add_option("--out", out, "output directory");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    namespace fs = std::filesystem;
    fs::create_directories(out);
    const auto d = tatesens::make_illustration_data(seed);
    tatesens::write_table(d.trial, (fs::path(out) / "trial.csv").string());
    tatesens::write_table(d.population, (fs::path(out) / "population.csv").string());
    std::ofstream s(fs::path(out) / "population_summary.txt");
    s << tatesens::illustration_summary_stats(d.population);
    if (!s) throw tatesens::io_error("cannot write population_summary.txt");
  } catch (const tatesens::Error& e) {
    std::cerr << e.what() << "\n";
    return tatesens::exit_code(e.category());
  }
  return 0;
}
