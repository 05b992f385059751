#include "tatesens/illustration.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/discrete_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include "tatesens/estimation.hpp"

namespace tatesens {

namespace {

const std::vector<std::string> kAgeLevels = {"le29", "30to39", "40to49", "ge50"};
const double kAgeLo[] = {16, 30, 40, 50};
const double kAgeHi[] = {29, 39, 49, 75};

}  // namespace

IllustrationData make_illustration_data(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  boost::random::uniform_01<double> unif;
  boost::random::normal_distribution<double> norm(0.0, 1.0);

  const std::size_t n1 = 478, n0 = 455, n = n1 + n0;
  std::vector<double> a(n, 0.0);
  std::fill(a.begin(), a.begin() + n1, 1.0);
  for (std::size_t i = n - 1; i > 0; --i) {
    boost::random::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(a[i], a[pick(rng)]);
  }

  boost::random::discrete_distribution<int> trial_age({0.107, 0.421, 0.348, 0.123});
  std::vector<double> id(n), age(n), agegrp(n), female(n), race(n), sis(n), pre(n), post(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool t = a[i] == 1.0;
    id[i] = static_cast<double>(i + 1);
    const int g = trial_age(rng);
    agegrp[i] = g;
    age[i] = std::round(kAgeLo[g] + (kAgeHi[g] - kAgeLo[g]) * unif(rng));
    female[i] = unif(rng) < (t ? 0.174 : 0.143) ? 1 : 0;
    race[i] = unif(rng) < (t ? 0.473 : 0.468) ? 1 : 0;
    const double p_sis = (t ? 0.437 : 0.475) + (race[i] == 1 ? 0.03 : -0.03);
    sis[i] = unif(rng) < p_sis ? 1 : 0;
    if (sis[i] == 1) {
      pre[i] = std::round(5 + 45 * unif(rng));
    } else {
      pre[i] = std::round(std::max(51.0, std::exp(5.4 + 0.45 * norm(rng))));
    }
    double effect = 20;
    if (race[i] == 1 && sis[i] == 0) effect += 23;
    if (race[i] == 0 && sis[i] == 1) effect += 25;
    if (race[i] == 1 && sis[i] == 1) effect += 21;
    const double gain = 60 + 0.3 * (age[i] - 40) - 6 * female[i] + 10 * sis[i] + a[i] * effect +
                        65 * norm(rng);
    post[i] = std::round(std::max(1.0, pre[i] + gain));
  }

  IllustrationData out;
  out.trial = DataTable(
      {numeric_column("id", std::move(id)), binary_column("A", std::move(a)),
       numeric_column("age", std::move(age)),
       categorical_column("agegrp", kAgeLevels, std::move(agegrp)),
       binary_column("female", std::move(female)),
       categorical_column("race", {"White", "nonWhite"}, std::move(race)),
       categorical_column("sis", {"noSIS", "SIS"}, std::move(sis)),
       numeric_column("cd4_0", std::move(pre)), numeric_column("cd4_1", std::move(post))},
      std::string("id"));

  const std::size_t np = 54220;
  boost::random::discrete_distribution<int> pop_age({0.341, 0.309, 0.247, 0.103});
  std::vector<double> pg(np), pf(np), pr(np);
  for (std::size_t i = 0; i < np; ++i) {
    pg[i] = pop_age(rng);
    pf[i] = unif(rng) < 0.266 ? 1 : 0;
    pr[i] = unif(rng) < 0.639 ? 1 : 0;
  }
  out.population = DataTable({categorical_column("agegrp", kAgeLevels, std::move(pg)),
                              binary_column("female", std::move(pf)),
                              categorical_column("race", {"White", "nonWhite"}, std::move(pr))});
  return out;
}

std::string illustration_summary_stats(const DataTable& population) {
  const auto& f = population.column("female");
  const auto& r = population.column("race");
  const double n = static_cast<double>(population.n_rows());
  std::map<std::pair<std::string, std::string>, double> cells;
  double nonwhite = 0, fem = 0;
  for (std::size_t i = 0; i < population.n_rows(); ++i) {
    const std::string fl = f.values[i] == 1.0 ? "1" : "0";
    cells[{fl, r.level_of(i)}] += 1 / n;
    nonwhite += r.level_of(i) == "nonWhite" ? 1 / n : 0;
    fem += f.values[i] / n;
  }
  std::ostringstream os;
  os.precision(10);
  os << "z_means.race=nonWhite = [" << nonwhite << "]\n";
  os << "z_means.female = [" << fem << "]\n";
  os << "[joint_cells]\n";
  os << "columns = female, race\n";
  double total = 0;
  std::vector<std::pair<std::string, double>> lines;
  for (const auto& [k, p] : cells) {
    lines.emplace_back(k.first + ", " + k.second, p);
    total += p;
  }
  for (auto& [label, p] : lines) os << label << " = " << p / total << "\n";
  return os.str();
}

}  // namespace tatesens
