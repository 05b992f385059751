#include "tatesens/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "tatesens/error.hpp"
#include "tatesens/estimation.hpp"

namespace tatesens {

namespace {

constexpr const char* kIndicator = "__participation";

std::string label_of(const Column& c, std::size_t row) {
  if (c.type == ColumnType::kCategorical) return c.level_of(row);
  if (c.type == ColumnType::kBinary) return c.values[row] != 0.0 ? "1" : "0";
  std::ostringstream os;
  os.precision(17);
  os << c.values[row];
  return os.str();
}

std::vector<Term> main_effects(const std::vector<std::string>& covars,
                               const std::vector<Term>& extra) {
  std::vector<Term> terms;
  for (const auto& c : covars) terms.push_back(Term{{c}});
  terms.insert(terms.end(), extra.begin(), extra.end());
  return terms;
}

std::vector<std::string> referenced_columns(const std::vector<Term>& terms) {
  std::vector<std::string> cols;
  for (const auto& t : terms) {
    for (const auto& c : t.columns) {
      if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    }
  }
  return cols;
}

// Population levels of categorical covariates must appear in the trial,
// otherwise no trial member can stand in for them.
void require_level_coverage(const DataTable& trial, const DataTable& pop,
                            const std::vector<std::string>& covars) {
  for (const auto& name : covars) {
    const Column& t = trial.column(name);
    if (t.type == ColumnType::kNumeric) continue;
    std::set<std::string> tl;
    for (std::size_t i = 0; i < t.size(); ++i) tl.insert(label_of(t, i));
    const Column& p = pop.column(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto l = label_of(p, i);
      if (!tl.count(l)) {
        throw coverage_error("population level '" + l + "' of '" + name +
                             "' is absent from the trial (effect-modifier/covariate coverage, "
                             "positivity)");
      }
    }
  }
}

std::vector<double> base_or_ones(const std::vector<double>& base, std::size_t n) {
  if (base.empty()) return std::vector<double>(n, 1.0);
  if (base.size() != n) throw validation_error("base weights do not match trial rows");
  return base;
}

void flag_extremes(WeightSet& ws, bool check_scores) {
  std::vector<double> positive;
  for (double w : ws.weights) {
    if (w > 0) positive.push_back(w);
  }
  if (positive.empty()) throw validation_error("every weight is zero");
  std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(positive.size() / 2),
                   positive.end());
  const double median = positive[positive.size() / 2];
  const double max = *std::max_element(ws.weights.begin(), ws.weights.end());
  if (max > 10 * median) {
    ws.warnings.push_back("extreme weights: max " + fmt6(max) + " exceeds 10x median " +
                          fmt6(median));
  }
  if (check_scores && ws.participation_scores) {
    std::size_t low = 0;
    for (double ps : *ws.participation_scores) low += ps < 0.01 ? 1 : 0;
    if (low > 0) {
      ws.warnings.push_back(std::to_string(low) +
                            " participation score(s) below 0.01 (near positivity violation)");
    }
  }
}

std::vector<std::string> balance_keys(const DataTable& t, const std::vector<std::string>& covars) {
  std::vector<std::string> keys;
  for (const auto& name : covars) {
    const Column& c = t.column(name);
    if (c.type == ColumnType::kCategorical) {
      for (const auto& l : c.levels) keys.push_back(name + "=" + l);
    } else {
      keys.push_back(name);
    }
  }
  return keys;
}

struct Moments {
  double mean = 0, var = 0, wsum = 0;
};

Moments weighted_moments(const std::vector<double>& v, std::span<const double> w,
                         const std::vector<char>& mask) {
  Moments m;
  double sw = 0, swx = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) continue;
    sw += w[i];
    swx += w[i] * v[i];
  }
  m.wsum = sw;
  m.mean = sw > 0 ? swx / sw : NAN;
  return m;
}

double unweighted_var(const std::vector<double>& v, const std::vector<char>& mask) {
  double n = 0, s = 0, ss = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!mask[i]) continue;
    n += 1;
    s += v[i];
  }
  if (n < 2) return 0;
  const double m = s / n;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask[i]) ss += (v[i] - m) * (v[i] - m);
  }
  return ss / (n - 1);
}

double std_diff(double a, double b, double var_a, double var_b) {
  const double d = std::abs(a - b);
  const double s = std::sqrt((var_a + var_b) / 2);
  if (s > 0) return d / s;
  return d == 0 ? 0.0 : INFINITY;
}

WeightSet finish(WeightSet ws, const DataTable& trial, const PopulationTarget* pop,
                 const std::vector<std::string>& covars, const WeightOptions& opts) {
  ws.ess = effective_sample_size(ws.weights);
  const auto& bc = opts.balance_covariates.empty() ? covars : opts.balance_covariates;
  ws.balance = diagnostics(ws.weights, trial, opts.treatment, pop, bc);
  return ws;
}

}  // namespace

std::string to_string(WeightProcedure p) {
  switch (p) {
    case WeightProcedure::kByOdds: return "by_odds";
    case WeightProcedure::kInverseProbability: return "inverse_probability";
    case WeightProcedure::kRatioOfProbability: return "ratio_of_probability";
    case WeightProcedure::kWithinTrialPropensity: return "within_trial_propensity";
  }
  return "?";
}

WeightProcedure weight_procedure_from_string(const std::string& s) {
  if (s == "by_odds") return WeightProcedure::kByOdds;
  if (s == "inverse_probability") return WeightProcedure::kInverseProbability;
  if (s == "ratio_of_probability") return WeightProcedure::kRatioOfProbability;
  if (s == "within_trial_propensity") return WeightProcedure::kWithinTrialPropensity;
  throw usage_error("unknown weighting procedure '" + s + "'");
}

const BalanceRow& BalanceTable::row(const std::string& covariate) const {
  for (const auto& r : rows) {
    if (r.covariate == covariate) return r;
  }
  throw validation_error("balance table has no row '" + covariate + "'");
}

double effective_sample_size(std::span<const double> w) {
  double s = 0, ss = 0;
  for (double x : w) {
    s += x;
    ss += x * x;
  }
  return ss > 0 ? s * s / ss : 0.0;
}

WeightSet weight_by_odds(const DataTable& trial, const PopulationTarget& pop,
                         const std::vector<std::string>& covars, const WeightOptions& opts) {
  if (!pop.has_dataset()) {
    throw validation_error("weighting by the odds needs a population dataset");
  }
  if (pop.trial_identifiable()) {
    throw validation_error(
        "trial members are identifiable in the population: use inverse-probability weighting");
  }
  const DataTable& pd = pop.dataset();
  require_level_coverage(trial, pd, covars);
  const auto terms = main_effects(covars, opts.extra_terms);
  const DataTable stacked = stack_tables(trial, pd, referenced_columns(terms), kIndicator);
  const std::size_t nt = trial.n_rows();
  const auto base = base_or_ones(opts.base_weights, nt);
  std::vector<double> prior;
  if (!opts.base_weights.empty()) {
    prior = base;
    prior.resize(stacked.n_rows(), 1.0);
  }
  const FittedModel fit =
      fit_model(stacked, ModelSpec{kIndicator, Link::kLogit, Family::kBinomial, terms, true}, prior,
                FitOptions{VcovKind::kModelBased, {}, 100, 1e-10, 30.0});

  WeightSet ws;
  ws.procedure = WeightProcedure::kByOdds;
  ws.participation_scores.emplace(nt);
  ws.weights.resize(nt);
  for (std::size_t i = 0; i < nt; ++i) {
    const double ps = fit.fitted(static_cast<Eigen::Index>(i));
    (*ws.participation_scores)[i] = ps;
    ws.weights[i] = base[i] * (1 - ps) / ps;
  }
  flag_extremes(ws, false);
  return finish(std::move(ws), trial, &pop, covars, opts);
}

WeightSet weight_inverse_probability(const PopulationTarget& pop,
                                     const std::vector<std::string>& covars,
                                     const WeightOptions& opts, const DataTable* trial) {
  if (!pop.has_dataset() || !pop.trial_identifiable() || !pop.membership_column()) {
    throw validation_error(
        "inverse-probability weighting needs a population dataset with identifiable trial "
        "members and a membership column");
  }
  const DataTable& pd = pop.dataset();
  const auto& member = pd.column(*pop.membership_column());
  if (member.type != ColumnType::kBinary) {
    throw validation_error("membership column must be binary");
  }
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < pd.n_rows(); ++i) {
    if (member.values[i] == 1.0) members.push_back(i);
  }
  if (members.size() < 2) throw validation_error("fewer than 2 trial members in the population");

  // Position of each member in the trial table, matched on the id column.
  std::vector<std::size_t> trial_pos;  // member k -> trial row
  if (trial && trial->id_column() && pd.has(*trial->id_column())) {
    const Column& tid = trial->column(*trial->id_column());
    const Column& pid = pd.column(*trial->id_column());
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < trial->n_rows(); ++i) row_of.emplace(label_of(tid, i), i);
    if (row_of.size() != members.size()) {
      throw validation_error("trial has " + std::to_string(row_of.size()) +
                             " ids but the population flags " + std::to_string(members.size()) +
                             " members");
    }
    for (std::size_t k : members) {
      auto it = row_of.find(label_of(pid, k));
      if (it == row_of.end()) {
        throw validation_error("population member id '" + label_of(pid, k) + "' not in trial");
      }
      trial_pos.push_back(it->second);
    }
  } else {
    trial_pos.resize(members.size());
    std::iota(trial_pos.begin(), trial_pos.end(), 0);
  }
  const std::size_t nm = members.size();
  const auto base = base_or_ones(opts.base_weights, nm);  // trial order

  const auto terms = main_effects(covars, opts.extra_terms);
  std::vector<double> prior;
  if (!opts.base_weights.empty()) {
    prior.assign(pd.n_rows(), 1.0);
    for (std::size_t k = 0; k < nm; ++k) prior[members[k]] = base[trial_pos[k]];
  }
  const FittedModel fit =
      fit_model(pd, ModelSpec{*pop.membership_column(), Link::kLogit, Family::kBinomial, terms, true},
                prior, FitOptions{VcovKind::kModelBased, {}, 100, 1e-10, 30.0});

  WeightSet ws;
  ws.procedure = WeightProcedure::kInverseProbability;
  ws.weights.assign(nm, 0.0);
  ws.participation_scores.emplace(nm);
  ws.population_rows.assign(nm, 0);
  for (std::size_t k = 0; k < nm; ++k) {
    const double ps = fit.fitted(static_cast<Eigen::Index>(members[k]));
    const std::size_t r = trial_pos[k];
    (*ws.participation_scores)[r] = ps;
    ws.weights[r] = base[r] / ps;
    ws.population_rows[r] = members[k];
  }
  flag_extremes(ws, true);
  const DataTable member_table = trial ? *trial : pd.select_rows(ws.population_rows);
  return finish(std::move(ws), member_table, &pop, covars, opts);
}

JointCells joint_cells_of(const DataTable& table, const std::vector<std::string>& covars) {
  JointCells jc;
  jc.columns = covars;
  std::vector<const Column*> cols;
  for (const auto& name : covars) {
    const Column& c = table.column(name);
    if (c.type == ColumnType::kNumeric) {
      throw validation_error("joint cells need categorical covariates; '" + name + "' is numeric");
    }
    cols.push_back(&c);
  }
  const double n = static_cast<double>(table.n_rows());
  for (std::size_t i = 0; i < table.n_rows(); ++i) {
    std::vector<std::string> cell;
    for (const Column* c : cols) cell.push_back(label_of(*c, i));
    jc.probability[cell] += 1;
  }
  for (auto& [cell, p] : jc.probability) p /= n;
  return jc;
}

WeightSet weight_ratio_of_probability(const DataTable& trial, const JointCells& cells,
                                      const std::vector<std::string>& covars,
                                      const WeightOptions& opts) {
  SummaryStats st;
  st.joint_cells = cells;
  validate(st);
  std::set<std::string> a(covars.begin(), covars.end());
  std::set<std::string> b(cells.columns.begin(), cells.columns.end());
  if (a != b) {
    throw validation_error("ratio-of-probability covariates must equal the joint-cell columns");
  }
  std::vector<const Column*> cols;
  for (const auto& name : cells.columns) {
    const Column& c = trial.column(name);
    if (c.type == ColumnType::kNumeric) {
      throw validation_error("ratio-of-probability weighting needs categorical covariates; '" +
                             name + "' is numeric");
    }
    cols.push_back(&c);
  }
  const std::size_t n = trial.n_rows();
  const auto base = base_or_ones(opts.base_weights, n);
  const double total = std::accumulate(base.begin(), base.end(), 0.0);
  std::map<std::vector<std::string>, double> trial_prob;
  std::vector<std::vector<std::string>> cell_of(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const Column* c : cols) cell_of[i].push_back(label_of(*c, i));
    trial_prob[cell_of[i]] += base[i];
  }
  for (auto& [cell, p] : trial_prob) p /= total;
  for (const auto& [cell, p] : cells.probability) {
    if (p > 0 && trial_prob[cell] <= 0) {
      std::string s;
      for (const auto& l : cell) s += (s.empty() ? "" : ",") + l;
      throw coverage_error("population cell (" + s + ") has probability " + fmt6(p) +
                           " but no trial members (effect-modifier coverage violated)");
    }
  }
  WeightSet ws;
  ws.procedure = WeightProcedure::kRatioOfProbability;
  ws.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = cells.probability.find(cell_of[i]);
    if (it == cells.probability.end()) {
      std::string s;
      for (const auto& l : cell_of[i]) s += (s.empty() ? "" : ",") + l;
      throw validation_error("trial cell (" + s + ") has no population probability");
    }
    ws.weights[i] = base[i] * it->second / trial_prob[cell_of[i]];
  }
  flag_extremes(ws, false);
  const PopulationTarget pop = PopulationTarget::summary(st);
  return finish(std::move(ws), trial, &pop, covars, opts);
}

WeightSet adjust_within_trial_balance(const DataTable& trial, const std::string& treatment,
                                      const std::vector<std::string>& covars,
                                      const WeightOptions& opts) {
  const auto terms = main_effects(covars, opts.extra_terms);
  const FittedModel fit =
      fit_model(trial, ModelSpec{treatment, Link::kLogit, Family::kBinomial, terms, true}, {},
                FitOptions{VcovKind::kModelBased, {}, 100, 1e-10, 30.0});
  const auto& a = trial.column(treatment).values;
  const std::size_t n = trial.n_rows();
  WeightSet ws;
  ws.procedure = WeightProcedure::kWithinTrialPropensity;
  ws.participation_scores.emplace(n);
  ws.weights.resize(n);
  double sum[2] = {0, 0};
  double count[2] = {0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const double ps = fit.fitted(static_cast<Eigen::Index>(i));
    (*ws.participation_scores)[i] = ps;
    const int arm = a[i] != 0.0 ? 1 : 0;
    ws.weights[i] = arm ? 1 / ps : 1 / (1 - ps);
    sum[arm] += ws.weights[i];
    count[arm] += 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int arm = a[i] != 0.0 ? 1 : 0;
    ws.weights[i] *= count[arm] / sum[arm];
  }
  flag_extremes(ws, false);
  WeightOptions o = opts;
  o.treatment = treatment;
  const auto& bc = o.balance_covariates.empty() ? covars : o.balance_covariates;
  const std::vector<double> ones(n, 1.0);
  ws.balance_before = diagnostics(ones, trial, treatment, nullptr, bc);
  return finish(std::move(ws), trial, nullptr, covars, o);
}

WeightProcedure select_population_procedure(const PopulationTarget& pop) {
  if (pop.has_dataset()) {
    return pop.trial_identifiable() ? WeightProcedure::kInverseProbability : WeightProcedure::kByOdds;
  }
  if (pop.stats().joint_cells) return WeightProcedure::kRatioOfProbability;
  throw validation_error(
      "population summary has no joint {X,Z} distribution; weighting to the population is not "
      "available (use the unweighted outcome-model analysis)");
}

WeightSet compose_two_step(const DataTable& trial, const PopulationTarget& pop,
                           const std::string& treatment,
                           const std::vector<std::string>& xz_covars,
                           const std::vector<std::string>& full_covars,
                           const TwoStepOptions& opts) {
  std::vector<double> within;
  std::optional<BalanceTable> before;
  std::vector<std::string> warnings;
  if (opts.adjust_within_trial && !full_covars.empty()) {
    WeightOptions wo;
    wo.extra_terms = opts.propensity_terms;
    WeightSet step1 = adjust_within_trial_balance(trial, treatment, full_covars, wo);
    within = step1.weights;
    before = step1.balance_before;
    for (auto& w : step1.warnings) warnings.push_back("within-trial: " + w);
  }
  const WeightProcedure proc = opts.population_procedure.value_or(select_population_procedure(pop));
  WeightOptions wo;
  wo.extra_terms = opts.participation_terms;
  wo.base_weights = within;
  wo.treatment = treatment;
  wo.balance_covariates = full_covars.empty() ? xz_covars : full_covars;
  WeightSet ws;
  switch (proc) {
    case WeightProcedure::kByOdds:
      ws = weight_by_odds(trial, pop, xz_covars, wo);
      break;
    case WeightProcedure::kInverseProbability:
      ws = weight_inverse_probability(pop, xz_covars, wo, &trial);
      break;
    case WeightProcedure::kRatioOfProbability:
      if (pop.has_dataset()) {
        ws = weight_ratio_of_probability(trial, joint_cells_of(pop.dataset(), xz_covars), xz_covars, wo);
      } else {
        if (!pop.stats().joint_cells) {
          throw validation_error("ratio-of-probability weighting needs joint cell probabilities");
        }
        ws = weight_ratio_of_probability(trial, *pop.stats().joint_cells, xz_covars, wo);
      }
      ws.balance = diagnostics(ws.weights, trial, treatment, &pop, wo.balance_covariates);
      break;
    case WeightProcedure::kWithinTrialPropensity:
      throw usage_error("within-trial propensity is not a trial-to-population procedure");
  }
  ws.within_trial_adjusted = !within.empty();
  ws.balance_before = before;
  ws.warnings.insert(ws.warnings.begin(), warnings.begin(), warnings.end());
  return ws;
}

WeightSet weight_each_arm_separately(const DataTable& trial, const PopulationTarget& pop,
                                     const std::string& treatment,
                                     const std::vector<std::string>& xz_covars) {
  const auto& a = trial.column(treatment).values;
  std::vector<std::size_t> rows[2];
  for (std::size_t i = 0; i < trial.n_rows(); ++i) rows[a[i] != 0.0 ? 1 : 0].push_back(i);
  WeightSet out;
  out.procedure = WeightProcedure::kByOdds;
  out.weights.assign(trial.n_rows(), 0.0);
  for (int arm = 0; arm < 2; ++arm) {
    const DataTable sub = trial.select_rows(rows[arm]);
    const WeightSet ws = weight_by_odds(sub, pop, xz_covars);
    for (std::size_t k = 0; k < rows[arm].size(); ++k) out.weights[rows[arm][k]] = ws.weights[k];
  }
  out.ess = effective_sample_size(out.weights);
  out.balance = diagnostics(out.weights, trial, treatment, &pop, xz_covars);
  return out;
}

BalanceTable diagnostics(std::span<const double> weights, const DataTable& trial,
                         const std::string& treatment, const PopulationTarget* pop,
                         const std::vector<std::string>& covars) {
  const std::size_t n = trial.n_rows();
  if (weights.size() != n) throw validation_error("weights do not match trial rows");
  BalanceTable bt;
  std::vector<char> all(n, 1), treated(n, 0), control(n, 0), positive(n, 0);
  const bool arms = !treatment.empty();
  for (std::size_t i = 0; i < n; ++i) {
    positive[i] = weights[i] > 0;
    if (arms) {
      const bool t = trial.column(treatment).values[i] != 0.0;
      treated[i] = t;
      control[i] = !t;
    }
  }
  std::vector<double> wt, wc;
  for (std::size_t i = 0; i < n; ++i) {
    if (treated[i]) wt.push_back(weights[i]);
    if (control[i]) wc.push_back(weights[i]);
  }
  bt.n_treated = wt.size();
  bt.n_control = wc.size();
  bt.ess_treated = effective_sample_size(wt);
  bt.ess_control = effective_sample_size(wc);
  bt.ess_total = effective_sample_size(weights);
  if (pop && pop->has_dataset()) bt.n_population = pop->dataset().n_rows();

  for (const auto& key : balance_keys(trial, covars)) {
    const auto v = key_values(trial, key);
    BalanceRow r;
    r.covariate = key;
    const std::string col = key.substr(0, key.find('='));
    r.proportion = key.find('=') != std::string::npos ||
                   trial.column(col).type == ColumnType::kBinary;
    r.trial = weighted_moments(v, weights, all).mean;
    const double var_trial = unweighted_var(v, all);
    if (arms) {
      r.treated = weighted_moments(v, weights, treated).mean;
      r.control = weighted_moments(v, weights, control).mean;
      r.std_diff_arms = std_diff(r.treated, r.control, unweighted_var(v, treated),
                                 unweighted_var(v, control));
    }
    if (!r.proportion) {
      double lo = INFINITY, hi = -INFINITY;
      for (std::size_t i = 0; i < n; ++i) {
        if (!positive[i]) continue;
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
      }
      r.trial_min = lo;
      r.trial_max = hi;
    }
    if (pop) {
      if (pop->has_dataset() && pop->dataset().has(col)) {
        const auto pv = key_values(pop->dataset(), key);
        const std::vector<char> pall(pv.size(), 1);
        const double pm = std::accumulate(pv.begin(), pv.end(), 0.0) / static_cast<double>(pv.size());
        r.population = pm;
        r.std_diff_population = std_diff(r.trial, pm, var_trial, unweighted_var(pv, pall));
      } else if (!pop->has_dataset()) {
        try {
          const double pm = pop->mean(key).point;
          r.population = pm;
          const double pvar = r.proportion ? pm * (1 - pm) : var_trial;
          r.std_diff_population = std_diff(r.trial, pm, var_trial, pvar);
        } catch (const Error&) {
          // not available in the summary
        }
      }
    }
    bt.rows.push_back(std::move(r));
  }
  return bt;
}

std::string balance_report(const BalanceTable& t, const std::string& title) {
  std::ostringstream os;
  os << "# " << title << "\n";
  os << "# n_treated=" << t.n_treated << " n_control=" << t.n_control;
  if (t.n_population) os << " n_population=" << *t.n_population;
  os << " ess_treated=" << fmt6(t.ess_treated) << " ess_control=" << fmt6(t.ess_control)
     << " ess_total=" << fmt6(t.ess_total) << "\n";
  os << "covariate,treated,control,trial,population,std_diff_arms,std_diff_population\n";
  for (const auto& r : t.rows) {
    os << r.covariate << "," << fmt6(r.treated) << "," << fmt6(r.control) << "," << fmt6(r.trial)
       << "," << (r.population ? fmt6(*r.population) : "not available") << ","
       << fmt6(r.std_diff_arms) << ","
       << (r.std_diff_population ? fmt6(*r.std_diff_population) : "NA") << "\n";
    if (!r.proportion) {
      os << r.covariate << " (range)," << fmt6(r.trial_min) << " to " << fmt6(r.trial_max)
         << ",,,,,\n";
    }
  }
  return os.str();
}

}  // namespace tatesens
