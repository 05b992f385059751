#include "tatesens/simulation.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <nlohmann/json.hpp>

#include "tatesens/error.hpp"
#include "tatesens/sensitivity.hpp"

namespace tatesens {

std::string to_string(Misspecification m) {
  switch (m) {
    case Misspecification::kNone: return "NONE";
    case Misspecification::kZ: return "Z_MISSPEC";
    case Misspecification::kV: return "V_MISSPEC";
  }
  return "?";
}

Misspecification misspecification_from_string(const std::string& s) {
  if (s == "NONE") return Misspecification::kNone;
  if (s == "Z_MISSPEC") return Misspecification::kZ;
  if (s == "V_MISSPEC") return Misspecification::kV;
  throw usage_error("unknown misspecification '" + s + "' (NONE, Z_MISSPEC, V_MISSPEC)");
}

void ScenarioSpec::validate() const {
  if (replicates < 1) throw simulation_error("replicates must be at least 1");
  if (!(rho_zv >= -1 && rho_zv <= 1)) throw simulation_error("rho_zv must lie in [-1, 1]");
  if (!(p_treat > 0 && p_treat < 1)) throw simulation_error("p_treat must lie in (0, 1)");
  if (link == Link::kIdentity && !(sigma > 0)) throw simulation_error("sigma must be positive");
  if (link == Link::kLog) throw simulation_error("simulation supports identity and logit links");
  if (n_trial < 20 || n_pop < 20) throw simulation_error("n_trial and n_pop must be at least 20");
  switch (misspecification) {
    case Misspecification::kNone:
      if (bzza != 0 || bvva != 0) {
        throw simulation_error("NONE misspecification needs bzza = bvva = 0");
      }
      break;
    case Misspecification::kZ:
      if (bzza == 0) throw simulation_error("Z_MISSPEC needs a nonzero bzza");
      break;
    case Misspecification::kV:
      if (bvva == 0) throw simulation_error("V_MISSPEC needs a nonzero bvva");
      break;
  }
  for (double v : {b0, ba, bx, bz, bza, bv, bva, bzza, bvva, mean_z, mean_v, shift_x, shift_z,
                   shift_v}) {
    if (!std::isfinite(v)) throw simulation_error("non-finite scenario parameter");
  }
}

double ScenarioSpec::true_tate() const {
  // E[Z^2 - 1] = mean_z^2 under unit variance.
  return ba + bza * mean_z + bva * mean_v + bzza * mean_z * mean_z + bvva * mean_v * mean_v;
}

ScenarioSpec parse_scenario(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("scenario is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw usage_error("scenario must be a JSON object");
  ScenarioSpec s;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "name") s.name = v.get<std::string>();
      else if (k == "misspecification") s.misspecification = misspecification_from_string(v.get<std::string>());
      else if (k == "link") s.link = link_from_string(v.get<std::string>());
      else if (k == "b0") s.b0 = v.get<double>();
      else if (k == "ba") s.ba = v.get<double>();
      else if (k == "bx") s.bx = v.get<double>();
      else if (k == "bz") s.bz = v.get<double>();
      else if (k == "bza") s.bza = v.get<double>();
      else if (k == "bv") s.bv = v.get<double>();
      else if (k == "bva") s.bva = v.get<double>();
      else if (k == "bzza") s.bzza = v.get<double>();
      else if (k == "bvva") s.bvva = v.get<double>();
      else if (k == "sigma") s.sigma = v.get<double>();
      else if (k == "rho_zv") s.rho_zv = v.get<double>();
      else if (k == "mean_z") s.mean_z = v.get<double>();
      else if (k == "mean_v") s.mean_v = v.get<double>();
      else if (k == "shift_x") s.shift_x = v.get<double>();
      else if (k == "shift_z") s.shift_z = v.get<double>();
      else if (k == "shift_v") s.shift_v = v.get<double>();
      else if (k == "p_treat") s.p_treat = v.get<double>();
      else if (k == "n_trial") s.n_trial = v.get<std::size_t>();
      else if (k == "n_pop") s.n_pop = v.get<std::size_t>();
      else if (k == "replicates") s.replicates = v.get<std::size_t>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else if (k == "threads") s.threads = v.get<unsigned>();
      else throw usage_error("unknown scenario key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("bad scenario value: ") + e.what());
  }
  s.validate();
  return s;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read scenario '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t rep) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(rep));
}

Replicate generate_replicate(const ScenarioSpec& spec, std::size_t rep) {
  spec.validate();
  std::mt19937_64 rng(replicate_seed(spec.seed, rep));
  boost::random::normal_distribution<double> norm(0.0, 1.0);
  boost::random::bernoulli_distribution<double> treat(spec.p_treat);
  const double rho = spec.rho_zv;
  const double tail = std::sqrt(1 - rho * rho);

  const std::size_t n = spec.n_trial;
  std::vector<double> a(n), x(n), z(n), v(n), y(n);
  const double mz = spec.mean_z + spec.shift_z;
  const double mv = spec.mean_v + rho * spec.shift_z + spec.shift_v;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = spec.shift_x + norm(rng);
    const double ez = norm(rng);
    const double ev = norm(rng);
    z[i] = mz + ez;
    v[i] = mv + rho * ez + tail * ev;
    a[i] = treat(rng) ? 1.0 : 0.0;
    const double eta = spec.b0 + spec.ba * a[i] + spec.bx * x[i] + spec.bz * z[i] +
                       spec.bza * z[i] * a[i] + spec.bv * v[i] + spec.bva * v[i] * a[i] +
                       spec.bzza * (z[i] * z[i] - 1) * a[i] + spec.bvva * (v[i] * v[i] - 1) * a[i];
    if (spec.link == Link::kIdentity) {
      y[i] = eta + spec.sigma * norm(rng);
    } else {
      boost::random::bernoulli_distribution<double> outcome(1 / (1 + std::exp(-eta)));
      y[i] = outcome(rng) ? 1.0 : 0.0;
    }
  }
  double n1 = 0;
  for (double ai : a) n1 += ai;
  if (n1 < 2 || n1 > static_cast<double>(n) - 2) {
    throw simulation_error("replicate " + std::to_string(rep) + " drew a near-empty arm");
  }
  const auto y_col = spec.link == Link::kIdentity ? numeric_column("Y", std::move(y))
                                                     : binary_column("Y", std::move(y));
  Replicate r;
  r.trial = DataTable({binary_column("A", std::move(a)), numeric_column("X", std::move(x)),
                       numeric_column("Z", std::move(z)), numeric_column("V", std::move(v)),
                       y_col});

  const std::size_t np = spec.n_pop;
  std::vector<double> px(np), pz(np);
  for (std::size_t i = 0; i < np; ++i) {
    px[i] = norm(rng);
    pz[i] = spec.mean_z + norm(rng);
  }
  r.population = DataTable({numeric_column("X", std::move(px)), numeric_column("Z", std::move(pz))});
  r.true_tate = spec.true_tate();
  return r;
}

const MethodEval& EvalReport::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.method == name) return m;
  }
  throw simulation_error("report has no method '" + name + "'");
}

namespace {

struct Draw {
  double est[3];
  double se[3];
  bool covered[3];
};

const char* const kMethodNames[3] = {"M1", "M2", "M2-model-based"};

Draw run_replicate(const ScenarioSpec& spec, std::size_t rep) {
  Replicate r = generate_replicate(spec, rep);
  VariableRoles roles;
  roles.treatment = "A";
  roles.outcome = SingleOutcome{"Y"};
  roles.x_covars = {"X"};
  roles.z_modifiers = {"Z"};
  roles.v_modifiers = {"V"};
  const AnalysisContext ctx = declare_roles(std::move(r.trial), roles);
  const PopulationTarget pop = PopulationTarget::full_dataset(std::move(r.population));

  OutcomeModelSpec om;
  om.model.response = "Y";
  om.model.link = spec.link;
  om.model.family = spec.link == Link::kIdentity ? Family::kGaussian : Family::kBinomial;
  for (const char* t : {"A", "X", "Z", "Z:A", "V", "V:A"}) om.model.terms.push_back(Term::parse(t));
  om.random_intercepts = false;

  SensitivityConfig cfg;
  cfg.ev_range["V"] = {spec.mean_v, spec.mean_v};
  cfg.sweep_axis = "V";
  cfg.grid_points = 2;
  cfg.scale = spec.link == Link::kIdentity ? EffectScale::kAdditive : EffectScale::kLogOr;

  WeightPlan plan;
  plan.xz_covars = {"X", "Z"};
  plan.two_step.adjust_within_trial = false;

  const SensitivityResult m1 = run_method1(ctx, pop, om, std::nullopt, cfg);
  const SensitivityResult m2 = run_method2(ctx, pop, om, std::nullopt, cfg, plan);
  OutcomeModelSpec om_mb = om;
  om_mb.vcov = VcovKind::kModelBased;
  const OutcomeFit fit_mb = fit_outcome_model(ctx, om_mb, m2.weights->weights);
  const TateInterval mb = tate_ci(fit_mb.model, m2.tate, m2.ez_used, {{"V", spec.mean_v}}, cfg.ci_level);

  const double truth = r.true_tate;
  Draw d{};
  const SensitivityRow* rows[2] = {&m1.rows.front(), &m2.rows.front()};
  for (int k = 0; k < 2; ++k) {
    d.est[k] = rows[k]->estimate;
    d.se[k] = rows[k]->std_error;
    d.covered[k] = rows[k]->lower <= truth && truth <= rows[k]->upper;
  }
  d.est[2] = mb.at_point.estimate;
  d.se[2] = mb.at_point.std_error;
  d.covered[2] = mb.lower <= truth && truth <= mb.upper;
  return d;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return NAN;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

EvalReport evaluate(const ScenarioSpec& spec) {
  spec.validate();
  const std::size_t reps = spec.replicates;
  std::vector<std::optional<Draw>> draws(reps);
  std::vector<std::string> errors(reps);
  std::atomic<std::size_t> next{0};
  unsigned nthreads = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
  nthreads = static_cast<unsigned>(std::min<std::size_t>(nthreads, reps));
  auto worker = [&] {
    for (std::size_t i = next++; i < reps; i = next++) {
      try {
        draws[i] = run_replicate(spec, i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  EvalReport rep;
  rep.scenario = spec.name;
  rep.true_tate = spec.true_tate();
  std::string first_error;
  for (std::size_t i = 0; i < reps; ++i) {
    if (draws[i]) {
      ++rep.replicates;
    } else {
      ++rep.failures;
      if (first_error.empty()) first_error = "replicate " + std::to_string(i) + ": " + errors[i];
    }
  }
  if (static_cast<double>(rep.failures) > 0.01 * static_cast<double>(reps)) {
    throw simulation_error(std::to_string(rep.failures) + " of " + std::to_string(reps) +
                           " replicates failed (limit 1%); first: " + first_error);
  }
  const double r = static_cast<double>(rep.replicates);
  rep.mcse_defined = rep.replicates > 1;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> err, se, cov;
    for (const auto& d : draws) {
      if (!d) continue;
      err.push_back(d->est[k] - rep.true_tate);
      se.push_back(d->se[k]);
      cov.push_back(d->covered[k] ? 1.0 : 0.0);
    }
    MethodEval m;
    m.method = kMethodNames[k];
    m.bias = mean_of(err);
    m.sd = sd_of(err);
    m.mean_se = mean_of(se);
    m.coverage = mean_of(cov);
    if (rep.mcse_defined) {
      m.bias_mcse = m.sd / std::sqrt(r);
      m.sd_mcse = m.sd / std::sqrt(2 * (r - 1));
      m.mean_se_mcse = sd_of(se) / std::sqrt(r);
      m.coverage_mcse = std::sqrt(m.coverage * (1 - m.coverage) / r);
    } else {
      m.bias_mcse = m.sd_mcse = m.mean_se_mcse = m.coverage_mcse = NAN;
    }
    rep.methods.push_back(m);
  }
  return rep;
}

VarianceComparison variance_comparison(const EvalReport& report) {
  const auto& m1 = report.method("M1");
  const auto& m2 = report.method("M2");
  const auto& mb = report.method("M2-model-based");
  VarianceComparison v;
  v.sd_ratio = m2.sd / m1.sd;
  v.model_based_ratio = mb.mean_se / m2.sd;
  v.sandwich_ratio = m2.mean_se / m2.sd;
  v.m2_more_variable = v.sd_ratio > 1;
  v.model_based_understates = v.model_based_ratio < 1;
  v.sandwich_closer = std::abs(v.sandwich_ratio - 1) < std::abs(v.model_based_ratio - 1);
  return v;
}

VarianceComparison variance_comparison(const ScenarioSpec& spec) {
  if (spec.misspecification != Misspecification::kNone) {
    throw simulation_error("variance comparison needs a correctly specified scenario");
  }
  return variance_comparison(evaluate(spec));
}

std::string eval_report_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "scenario,method,replicates,failures,true_tate,bias,bias_mcse,sd,sd_mcse,mean_se,"
        "mean_se_mcse,coverage,coverage_mcse,note\n";
  for (const auto& r : reports) {
    for (const auto& m : r.methods) {
      os << r.scenario << "," << m.method << "," << r.replicates << "," << r.failures << ","
         << fmt6(r.true_tate) << "," << fmt6(m.bias) << "," << fmt6(m.bias_mcse) << ","
         << fmt6(m.sd) << "," << fmt6(m.sd_mcse) << "," << fmt6(m.mean_se) << ","
         << fmt6(m.mean_se_mcse) << "," << fmt6(m.coverage) << "," << fmt6(m.coverage_mcse) << ","
         << (r.mcse_defined ? "" : "MCSE undefined (single replicate)") << "\n";
    }
  }
  return os.str();
}

}  // namespace tatesens
