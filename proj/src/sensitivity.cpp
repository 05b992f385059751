#include "tatesens/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "tatesens/error.hpp"

namespace tatesens {

namespace {

Error sens_error(const std::string& what) {
  return Error(ErrorCategory::kValidation, "sensitivity", what);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

double weighted_mean(const std::vector<double>& v, std::span<const double> w) {
  double s = 0, sw = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    s += wi * v[i];
    sw += wi;
  }
  return s / sw;
}

OutcomeFit fit_on(const DataTable& table, const std::vector<std::size_t>* subjects,
                  const OutcomeModelSpec& spec, std::span<const double> subject_weights) {
  OutcomeFit out;
  if (!subjects) {
    FitOptions fo;
    fo.vcov = spec.vcov;
    out.model = fit_model(table, spec.model, subject_weights, fo);
    return out;
  }
  if (spec.random_intercepts) {
    if (spec.model.link != Link::kIdentity) {
      throw usage_error("random-intercepts outcome models need the identity link");
    }
    const Design d = build_design(table, spec.model);
    out.mixed = fit_random_intercepts(d, *subjects, subject_weights, MixedOptions{spec.vcov, true});
    out.model = out.mixed->fixed;
    return out;
  }
  std::vector<double> w;
  if (!subject_weights.empty()) {
    for (std::size_t s : *subjects) w.push_back(subject_weights[s]);
  }
  FitOptions fo;
  fo.vcov = spec.vcov.value_or(VcovKind::kClusterSandwich);
  fo.clusters = *subjects;
  out.model = fit_model(table, spec.model, w, fo);
  return out;
}

OutcomeModelSpec with_response(const AnalysisContext& ctx, OutcomeModelSpec spec) {
  if (spec.model.response.empty()) spec.model.response = ctx.response_name();
  return spec;
}

std::vector<std::string> treatment_factors(const AnalysisContext& ctx) {
  if (ctx.is_long()) return {ctx.period_name(), ctx.roles().treatment};
  return {ctx.roles().treatment};
}

std::map<std::string, MeanEstimate> resolve_ez(const TateSpec& spec, const SensitivityConfig& cfg,
                                               const PopulationTarget& pop) {
  std::map<std::string, MeanEstimate> out;
  for (const auto& key : spec.z_keys()) {
    if (auto it = cfg.ez.find(key); it != cfg.ez.end()) {
      out[key] = it->second;
      continue;
    }
    try {
      out[key] = pop.mean(key, cfg.ci_level);
    } catch (const Error&) {
      throw sens_error("no estimate of the population mean of Z '" + key +
                       "': give it in the sensitivity block or the population data");
    }
  }
  return out;
}

struct Axes {
  std::vector<double> first;
  std::vector<double> second;  // empty: one axis
  bool none = false;           // no V in the formula
};

Axes build_axes(const TateSpec& spec, const SensitivityConfig& cfg, std::vector<std::string>& notes) {
  Axes ax;
  const auto vkeys = spec.v_keys();
  if (vkeys.empty()) {
    ax.none = true;
    notes.push_back("no V modifier in the TATE formula: the estimate does not depend on a "
                    "sensitivity parameter");
    return ax;
  }
  for (const auto& k : vkeys) {
    const bool swept = k == cfg.sweep_axis || (cfg.second_axis && k == *cfg.second_axis);
    if (!swept && !cfg.ev_fixed.count(k)) {
      throw sens_error("V '" + k + "' is neither swept nor fixed in the sensitivity block");
    }
  }
  for (const auto& [k, r] : cfg.ev_range) {
    if (!contains(vkeys, k)) notes.push_back("ev range for '" + k + "' is not used by the model");
  }
  if (!contains(vkeys, cfg.sweep_axis)) {
    throw sens_error("sweep axis '" + cfg.sweep_axis + "' is not a V term of the model");
  }
  const auto& r1 = cfg.ev_range.at(cfg.sweep_axis);
  ax.first = sensitivity_grid(r1.first, r1.second, cfg.grid_points);
  if (cfg.second_axis) {
    const auto& r2 = cfg.ev_range.at(*cfg.second_axis);
    ax.second = sensitivity_grid(r2.first, r2.second, cfg.grid_points);
  }
  return ax;
}

SensitivityRow make_row(const TateInterval& ti, EffectScale scale, double ev, std::optional<double> ev2) {
  SensitivityRow row;
  row.ev_value = ev;
  row.ev_value2 = ev2;
  row.std_error = ti.at_point.std_error;
  if (is_ratio_scale(scale)) {
    row.estimate = std::exp(ti.at_point.estimate);
    row.lower = std::exp(ti.lower);
    row.upper = std::exp(ti.upper);
  } else {
    row.estimate = ti.at_point.estimate;
    row.lower = ti.lower;
    row.upper = ti.upper;
  }
  return row;
}

void sweep(SensitivityResult& res, const SensitivityConfig& cfg) {
  const Axes ax = build_axes(res.tate, cfg, res.notes);
  const FittedModel& m = res.fit.model;
  if (ax.none) {
    const TateInterval ti = tate_ci(m, res.tate, res.ez_used, {}, cfg.ci_level);
    res.rows.push_back(make_row(ti, cfg.scale, NAN, std::nullopt));
    return;
  }
  MeanMap ev(cfg.ev_fixed.begin(), cfg.ev_fixed.end());
  for (double a : ax.first) {
    ev[cfg.sweep_axis] = a;
    if (ax.second.empty()) {
      res.rows.push_back(make_row(tate_ci(m, res.tate, res.ez_used, ev, cfg.ci_level), cfg.scale, a,
                                  std::nullopt));
      continue;
    }
    for (double b : ax.second) {
      ev[*cfg.second_axis] = b;
      res.rows.push_back(
          make_row(tate_ci(m, res.tate, res.ez_used, ev, cfg.ci_level), cfg.scale, a, b));
    }
  }
}

// TATE formula evaluated at (weighted) trial means of every modifier key.
ReferenceEstimate trial_reference(const AnalysisContext& ctx, const SensitivityResult& res,
                                  std::span<const double> w, const SensitivityConfig& cfg,
                                  const std::string& label) {
  MeanMap z, v;
  for (const auto& k : res.tate.z_keys()) z[k] = weighted_mean(key_values(ctx.subject_table(), k), w);
  for (const auto& k : res.tate.v_keys()) v[k] = weighted_mean(key_values(ctx.subject_table(), k), w);
  const LinComResult r = on_scale(tate_point(res.fit.model, res.tate, z, v, cfg.ci_level), cfg.scale);
  return ReferenceEstimate{label, r.estimate, r.lower, r.upper};
}

void add_notes(SensitivityResult& res) {
  std::size_t with_ci = 0;
  for (const auto& [k, e] : res.ez_used) with_ci += e.has_interval() ? 1 : 0;
  if (with_ci > 1) {
    res.notes.push_back("confidence limits combine " + std::to_string(with_ci) +
                        " Z intervals through all " + std::to_string(1u << with_ci) +
                        " corners (extension of the single-Z recipe)");
  }
  for (const auto& t : res.tate.terms) {
    if (t.factors.size() > 1) {
      res.notes.push_back("coefficient '" + t.coefficient +
                          "' uses a product of modifier means (independence assumed)");
    }
  }
  if (res.fit.mixed && res.fit.mixed->between_truncated) {
    res.notes.push_back("random-intercept variance estimated at 0");
  }
}

std::string num(double v) { return fmt6(v); }

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(EffectScale s) {
  switch (s) {
    case EffectScale::kAdditive: return "ADDITIVE";
    case EffectScale::kLogOr: return "LOG_OR";
    case EffectScale::kOr: return "OR";
    case EffectScale::kLogRr: return "LOG_RR";
    case EffectScale::kRr: return "RR";
    case EffectScale::kLogRateRatio: return "LOG_RATE_RATIO";
    case EffectScale::kRateRatio: return "RATE_RATIO";
  }
  return "?";
}

EffectScale effect_scale_from_string(const std::string& s) {
  for (auto e : {EffectScale::kAdditive, EffectScale::kLogOr, EffectScale::kOr, EffectScale::kLogRr,
                 EffectScale::kRr, EffectScale::kLogRateRatio, EffectScale::kRateRatio}) {
    if (to_string(e) == s) return e;
  }
  throw usage_error("unknown effect scale '" + s + "'");
}

bool is_ratio_scale(EffectScale s) {
  return s == EffectScale::kOr || s == EffectScale::kRr || s == EffectScale::kRateRatio;
}

void check_scale(EffectScale s, Link link, Family family) {
  bool ok = false;
  switch (s) {
    case EffectScale::kAdditive: ok = link == Link::kIdentity; break;
    case EffectScale::kLogOr:
    case EffectScale::kOr: ok = link == Link::kLogit; break;
    case EffectScale::kLogRr:
    case EffectScale::kRr: ok = link == Link::kLog && family == Family::kBinomial; break;
    case EffectScale::kLogRateRatio:
    case EffectScale::kRateRatio: ok = link == Link::kLog && family == Family::kPoisson; break;
  }
  if (!ok) {
    throw usage_error("effect scale " + to_string(s) + " does not match a " + to_string(link) + "/" +
                      to_string(family) + " model");
  }
}

std::string MeanFactor::text() const {
  return std::string(complement ? "1-" : "") + (source == Source::kZ ? "z:" : "v:") + key;
}

MeanFactor MeanFactor::parse(const std::string& text) {
  MeanFactor f;
  std::string t = text;
  if (t.rfind("1-", 0) == 0) {
    f.complement = true;
    t = t.substr(2);
  }
  if (t.rfind("z:", 0) == 0) {
    f.source = Source::kZ;
  } else if (t.rfind("v:", 0) == 0) {
    f.source = Source::kV;
  } else {
    throw usage_error("mean factor '" + text + "' must look like z:key, v:key, 1-z:key or 1-v:key");
  }
  f.key = t.substr(2);
  if (f.key.empty()) throw usage_error("mean factor '" + text + "' has no key");
  return f;
}

namespace {
std::vector<std::string> keys_of(const TateSpec& s, MeanFactor::Source src) {
  std::vector<std::string> out;
  for (const auto& t : s.terms) {
    for (const auto& f : t.factors) {
      if (f.source == src && !contains(out, f.key)) out.push_back(f.key);
    }
  }
  return out;
}
}  // namespace

std::vector<std::string> TateSpec::z_keys() const { return keys_of(*this, MeanFactor::Source::kZ); }
std::vector<std::string> TateSpec::v_keys() const { return keys_of(*this, MeanFactor::Source::kV); }

TateSpec derive_tate_spec(const FittedModel& model, const std::vector<std::string>& treatment_factors,
                          const std::vector<std::string>& z_columns,
                          const std::vector<std::string>& v_columns) {
  const std::set<std::string> tf(treatment_factors.begin(), treatment_factors.end());
  TateSpec spec;
  for (const auto& name : model.names) {
    const auto parts = split(name, ':');
    std::set<std::string> ps(parts.begin(), parts.end());
    if (!std::includes(ps.begin(), ps.end(), tf.begin(), tf.end())) continue;
    if (ps.size() == tf.size()) {
      spec.treatment_coefficient = name;
      continue;
    }
    TateTerm term{name, {}};
    for (const auto& p : parts) {
      if (tf.count(p)) continue;
      std::string col = p, key = p;
      if (auto br = p.find('['); br != std::string::npos && p.back() == ']') {
        col = p.substr(0, br);
        key = col + "=" + p.substr(br + 1, p.size() - br - 2);
      }
      MeanFactor f;
      f.key = key;
      if (contains(z_columns, col)) {
        f.source = MeanFactor::Source::kZ;
      } else if (contains(v_columns, col)) {
        f.source = MeanFactor::Source::kV;
      } else {
        throw sens_error("interaction '" + name + "' involves '" + col +
                         "', which is not a declared Z or V modifier");
      }
      term.factors.push_back(f);
    }
    spec.terms.push_back(std::move(term));
  }
  if (spec.treatment_coefficient.empty()) {
    throw sens_error("model has no treatment coefficient '" + join(treatment_factors, ":") + "'");
  }
  return spec;
}

Combination tate_combination(const TateSpec& spec, const MeanMap& z_means, const MeanMap& v_means) {
  Combination c{{spec.treatment_coefficient, 1.0}};
  for (const auto& t : spec.terms) {
    double w = 1.0;
    for (const auto& f : t.factors) {
      const MeanMap& m = f.source == MeanFactor::Source::kZ ? z_means : v_means;
      auto it = m.find(f.key);
      if (it == m.end()) throw sens_error("no mean supplied for '" + f.text() + "'");
      w *= f.complement ? 1.0 - it->second : it->second;
    }
    c.emplace_back(t.coefficient, w);
  }
  return c;
}

LinComResult tate_point(const FittedModel& model, const TateSpec& spec, const MeanMap& z_means,
                        const MeanMap& v_means, double ci_level) {
  if (!model.has(spec.treatment_coefficient)) {
    throw sens_error("model has no treatment coefficient '" + spec.treatment_coefficient + "'");
  }
  for (const auto& t : spec.terms) {
    if (!model.has(t.coefficient)) {
      throw sens_error("model has no interaction coefficient '" + t.coefficient +
                       "' required by the TATE formula");
    }
  }
  return lincom(model, tate_combination(spec, z_means, v_means), ci_level);
}

LinComResult on_scale(const LinComResult& r, EffectScale scale) {
  if (!is_ratio_scale(scale)) return r;
  return LinComResult{std::exp(r.estimate), r.std_error, std::exp(r.lower), std::exp(r.upper)};
}

TateInterval tate_ci(const FittedModel& model, const TateSpec& spec,
                     const std::map<std::string, MeanEstimate>& ez, const MeanMap& ev,
                     double ci_level) {
  MeanMap z;
  std::vector<std::string> varying;
  for (const auto& key : spec.z_keys()) {
    auto it = ez.find(key);
    if (it == ez.end()) throw sens_error("no population mean supplied for Z '" + key + "'");
    const MeanEstimate& e = it->second;
    if (e.has_interval()) {
      if (*e.lo > e.point || e.point > *e.hi) {
        throw sens_error("confidence limits for '" + key + "' do not bracket the point");
      }
      if (*e.lo < *e.hi) varying.push_back(key);
    }
    z[key] = e.point;
  }
  TateInterval out;
  out.at_point = tate_point(model, spec, z, ev, ci_level);
  out.lower = out.at_point.lower;
  out.upper = out.at_point.upper;
  if (varying.size() > 20) throw sens_error("too many Z confidence intervals for the corner search");
  const std::size_t n = std::size_t{1} << varying.size();
  if (varying.empty()) return out;
  for (std::size_t mask = 0; mask < n; ++mask) {
    MeanMap zc = z;
    for (std::size_t j = 0; j < varying.size(); ++j) {
      const MeanEstimate& e = ez.at(varying[j]);
      zc[varying[j]] = (mask >> j) & 1 ? *e.hi : *e.lo;
    }
    const LinComResult r = tate_point(model, spec, zc, ev, ci_level);
    out.lower = std::min(out.lower, r.lower);
    out.upper = std::max(out.upper, r.upper);
  }
  out.corners = n;
  return out;
}

void SensitivityConfig::validate() const {
  if (grid_points < 2) throw usage_error("grid_points must be at least 2");
  if (!(ci_level > 0 && ci_level < 1)) throw usage_error("ci_level must lie in (0, 1)");
  for (const auto& [k, r] : ev_range) {
    if (!(r.first <= r.second)) throw usage_error("ev range for '" + k + "' has low > high");
  }
  if (!ev_range.empty() && !ev_range.count(sweep_axis)) {
    throw usage_error("sweep axis '" + sweep_axis + "' has no ev range");
  }
  if (second_axis) {
    if (!ev_range.count(*second_axis)) {
      throw usage_error("second axis '" + *second_axis + "' has no ev range");
    }
    if (*second_axis == sweep_axis) throw usage_error("the two sweep axes must differ");
  }
  for (const auto& [k, e] : ez) {
    if (e.has_interval() && (*e.lo > e.point || e.point > *e.hi)) {
      throw usage_error("ez limits for '" + k + "' do not bracket the point");
    }
  }
}

std::vector<double> sensitivity_grid(double low, double high, int n) {
  if (n < 2) throw usage_error("grid needs at least 2 points");
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = low + (high - low) * i / (n - 1);
  g.front() = low;
  g.back() = high;
  return g;
}

std::string to_string(Method m) { return m == Method::kOutcomeModel ? "M1" : "M2"; }

std::string OutcomeFit::report(const std::string& title, double ci_level) const {
  if (mixed) return mixed_report(*mixed, title, ci_level);
  return coefficient_report(model, title, ci_level);
}

OutcomeFit fit_outcome_model(const AnalysisContext& ctx, const OutcomeModelSpec& spec,
                             std::span<const double> subject_weights) {
  const OutcomeModelSpec s = with_response(ctx, spec);
  if (!subject_weights.empty() && subject_weights.size() != ctx.subject_table().n_rows()) {
    throw validation_error("need one weight per trial subject");
  }
  if (ctx.is_long()) return fit_on(ctx.long_table(), &ctx.long_to_subject(), s, subject_weights);
  return fit_on(ctx.table(), nullptr, s, subject_weights);
}

SensitivityResult run_method1(const AnalysisContext& ctx, const PopulationTarget& pop,
                              const OutcomeModelSpec& outcome, const std::optional<TateSpec>& tate,
                              const SensitivityConfig& cfg,
                              std::span<const double> subject_weights) {
  cfg.validate();
  check_scale(cfg.scale, outcome.model.link, outcome.model.family);
  SensitivityResult res;
  res.method = Method::kOutcomeModel;
  res.scale = cfg.scale;
  res.sweep_axis = cfg.sweep_axis;
  res.second_axis = cfg.second_axis;
  res.fit = fit_outcome_model(ctx, outcome, subject_weights);
  res.tate = tate ? *tate
                  : derive_tate_spec(res.fit.model, treatment_factors(ctx), ctx.roles().z_modifiers,
                                     ctx.roles().v_modifiers);
  res.ez_used = resolve_ez(res.tate, cfg, pop);
  sweep(res, cfg);
  res.reference = trial_reference(
      ctx, res, subject_weights, cfg,
      subject_weights.empty() ? "SATE (model, trial means)" : "SATE (model, weighted trial means)");
  if (!subject_weights.empty()) res.variant = "within-trial weighted";
  add_notes(res);
  return res;
}

SensitivityResult run_method2(const AnalysisContext& ctx, const PopulationTarget& pop,
                              const OutcomeModelSpec& outcome, const std::optional<TateSpec>& tate,
                              const SensitivityConfig& cfg, const WeightPlan& plan) {
  cfg.validate();
  check_scale(cfg.scale, outcome.model.link, outcome.model.family);
  const auto& roles = ctx.roles();
  std::vector<std::string> xz = plan.xz_covars;
  if (xz.empty()) {
    xz = roles.x_covars;
    xz.insert(xz.end(), roles.z_modifiers.begin(), roles.z_modifiers.end());
  }
  std::vector<std::string> full = plan.full_covars;
  if (full.empty()) {
    full = xz;
    for (const auto& v : roles.v_modifiers) {
      if (!contains(full, v)) full.push_back(v);
    }
  }
  if (xz.empty()) throw usage_error("Method 2 needs at least one X or Z covariate to weight on");
  WeightSet ws = compose_two_step(ctx.subject_table(), pop, roles.treatment, xz, full, plan.two_step);

  SensitivityResult res;
  res.method = Method::kWeighted;
  res.scale = cfg.scale;
  res.sweep_axis = cfg.sweep_axis;
  res.second_axis = cfg.second_axis;
  res.fit = fit_outcome_model(ctx, outcome, ws.weights);
  res.tate = tate ? *tate
                  : derive_tate_spec(res.fit.model, treatment_factors(ctx), roles.z_modifiers,
                                     roles.v_modifiers);
  res.ez_used = resolve_ez(res.tate, cfg, pop);
  sweep(res, cfg);
  res.reference = trial_reference(ctx, res, ws.weights, cfg, "(X,Z)-adjusted ATE (weighted trial means)");
  for (const auto& w : ws.warnings) res.notes.push_back("weights: " + w);
  res.weights = std::move(ws);
  add_notes(res);
  return res;
}

MethodComparison compare_methods(const SensitivityResult& m1, const SensitivityResult& m2) {
  if (m1.rows.empty() || m2.rows.empty() || m1.rows.size() != m2.rows.size()) {
    throw usage_error("methods must be evaluated on the same grid to be compared");
  }
  MethodComparison out;
  out.agree = true;
  std::ostringstream os;
  const std::size_t ends[2] = {0, m1.rows.size() - 1};
  for (std::size_t k : ends) {
    const auto& a = m1.rows[k];
    const auto& b = m2.rows[k];
    const bool ok = a.estimate >= b.lower && a.estimate <= b.upper && b.estimate >= a.lower &&
                    b.estimate <= a.upper;
    out.agree = out.agree && ok;
    os << "ev=" << num(a.ev_value) << ": M1 " << num(a.estimate) << " (" << num(a.lower) << ", "
       << num(a.upper) << "), M2 " << num(b.estimate) << " (" << num(b.lower) << ", "
       << num(b.upper) << ") " << (ok ? "agree" : "disagree") << "\n";
  }
  os << (out.agree ? "methods agree at both ends of the range; the unweighted results may be used"
                   : "methods disagree; prefer the weighted method (Method 2)")
     << "\n";
  out.summary = os.str();
  return out;
}

std::string sensitivity_csv(std::span<const SensitivityResult> results) {
  bool two = false;
  for (const auto& r : results) two = two || r.second_axis.has_value();
  std::ostringstream os;
  os << "ev_value," << (two ? "ev_value2," : "") << "estimate,lower,upper,method,scale\n";
  for (const auto& r : results) {
    for (const auto& row : r.rows) {
      os << num(row.ev_value) << ",";
      if (two) os << (row.ev_value2 ? num(*row.ev_value2) : "NA") << ",";
      os << num(row.estimate) << "," << num(row.lower) << "," << num(row.upper) << ","
         << to_string(r.method) << (r.variant.empty() ? "" : "-adj") << "," << to_string(r.scale)
         << "\n";
    }
  }
  return os.str();
}

std::string sensitivity_plot_data(std::span<const SensitivityResult> results) {
  std::ostringstream os;
  os << "method,line,ev_value,value\n";
  for (const auto& r : results) {
    const std::string m = to_string(r.method) + (r.variant.empty() ? "" : "-adj");
    for (const char* line : {"estimate", "lower", "upper"}) {
      for (const auto& row : r.rows) {
        if (row.ev_value2) continue;  // 2-axis grids are tabulated only
        const double v = std::string(line) == "estimate" ? row.estimate
                         : std::string(line) == "lower"  ? row.lower
                                                         : row.upper;
        os << m << "," << line << "," << num(row.ev_value) << "," << num(v) << "\n";
      }
    }
  }
  return os.str();
}

std::string sensitivity_summary(std::span<const SensitivityResult> results) {
  std::ostringstream os;
  for (const auto& r : results) {
    os << to_string(r.method) << (r.variant.empty() ? "" : " (" + r.variant + ")") << ", scale "
       << to_string(r.scale) << "\n";
    for (const auto& [k, e] : r.ez_used) {
      os << "  E[" << k << "|P=1] = " << num(e.point);
      if (e.has_interval()) os << " (" << num(*e.lo) << ", " << num(*e.hi) << ")";
      os << "\n";
    }
    if (r.reference) {
      os << "  " << r.reference->label << ": " << num(r.reference->estimate) << " ("
         << num(r.reference->lower) << ", " << num(r.reference->upper) << ")\n";
    }
    if (!r.rows.empty()) {
      const auto& a = r.rows.front();
      const auto& b = r.rows.back();
      if (std::isnan(a.ev_value)) {
        os << "  TATE: " << num(a.estimate) << " (" << num(a.lower) << ", " << num(a.upper) << ")\n";
      } else {
        os << "  TATE at " << r.sweep_axis << "=" << num(a.ev_value) << ": " << num(a.estimate)
           << " (" << num(a.lower) << ", " << num(a.upper) << ")\n";
        os << "  TATE at " << r.sweep_axis << "=" << num(b.ev_value) << ": " << num(b.estimate)
           << " (" << num(b.lower) << ", " << num(b.upper) << ")\n";
      }
    }
    for (const auto& n : r.notes) os << "  note: " << n << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<ScanCandidate> default_scan_candidates(const DataTable& table,
                                                   const std::vector<std::string>& columns) {
  std::vector<ScanCandidate> out;
  for (const auto& c : columns) out.push_back(ScanCandidate{c, {c}, false});
  for (std::size_t i = 0; i < columns.size(); ++i) {
    for (std::size_t j = i + 1; j < columns.size(); ++j) {
      const auto& a = columns[i];
      const auto& b = columns[j];
      out.push_back(ScanCandidate{a + ":" + b, {a, b}, false});
      if (table.column(a).type != ColumnType::kNumeric &&
          table.column(b).type != ColumnType::kNumeric) {
        out.push_back(ScanCandidate{a + "-" + b, {a, b}, true});
      }
    }
  }
  return out;
}

ScanReport scan_effect_modifiers(const AnalysisContext& ctx, const OutcomeModelSpec& base,
                                 const std::vector<ScanCandidate>& candidates, double threshold) {
  ScanReport rep;
  rep.threshold = threshold;
  const OutcomeModelSpec spec0 = with_response(ctx, base);
  const auto tf = treatment_factors(ctx);
  const DataTable& table0 = ctx.is_long() ? ctx.long_table() : ctx.table();
  auto same_set = [](std::vector<std::string> a, std::vector<std::string> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    return a == b;
  };
  for (const auto& cand : candidates) {
    try {
      DataTable table = table0;
      std::vector<std::string> cols = cand.columns;
      for (const auto& c : cols) {
        if (!table.has(c)) throw validation_error("candidate column '" + c + "' not in trial");
        if (contains(tf, c)) throw validation_error("candidate '" + c + "' is a treatment factor");
      }
      if (cand.cross_classify) {
        const std::string name = join(cols, "_");
        table = cross_classify(table, cols, name);
        cols = {name};
      }
      OutcomeModelSpec spec = spec0;
      std::vector<std::vector<std::string>> add;
      add.push_back(cols);
      if (ctx.is_long()) {
        auto cf = cols;
        cf.push_back(ctx.period_name());
        add.push_back(cf);
      }
      auto target = cols;
      target.insert(target.end(), tf.begin(), tf.end());
      add.push_back(target);
      for (const auto& t : add) {
        bool present = false;
        for (const auto& e : spec.model.terms) present = present || same_set(e.columns, t);
        if (!present) spec.model.terms.push_back(Term{t});
      }
      const Term tterm{target};
      for (auto& e : spec.model.terms) {
        if (same_set(e.columns, target)) e = tterm;
      }
      const OutcomeFit fit =
          fit_on(table, ctx.is_long() ? &ctx.long_to_subject() : nullptr, spec, {});
      const FittedModel& m = fit.model;
      for (const auto& span : m.terms) {
        if (span.label != tterm.label()) continue;
        for (std::size_t j = span.first; j < span.first + span.count; ++j) {
          ScanRow row;
          row.candidate = cand.label;
          row.coefficient = m.names[j];
          row.estimate = m.coef(static_cast<Eigen::Index>(j));
          row.std_error = std::sqrt(m.vcov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)));
          row.statistic = row.estimate / row.std_error;
          row.df = m.df;
          row.flagged = std::abs(row.statistic) >= threshold;
          rep.rows.push_back(row);
        }
      }
    } catch (const Error& e) {
      rep.notes.push_back("skipped " + cand.label + ": " + e.what());
    }
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const ScanRow& a, const ScanRow& b) {
    return std::abs(a.statistic) > std::abs(b.statistic);
  });
  return rep;
}

std::string scan_report_text(const ScanReport& r) {
  std::ostringstream os;
  os << "# effect-modifier scan (advisory; |statistic| >= " << num(r.threshold)
     << " flagged; borderline modifiers are best kept in the model)\n";
  os << "candidate,coefficient,estimate,std_error,df,statistic,flag\n";
  for (const auto& row : r.rows) {
    os << row.candidate << "," << row.coefficient << "," << num(row.estimate) << ","
       << num(row.std_error) << "," << (row.df ? num(*row.df) : "NA") << "," << num(row.statistic)
       << "," << (row.flagged ? "*" : "") << "\n";
  }
  for (const auto& n : r.notes) os << "# " << n << "\n";
  return os.str();
}

void reject_unobserved_in_trial(const DataTable& trial, const std::vector<std::string>& modifiers) {
  reject_unobserved_in_trial(trial.names(), modifiers);
}

void reject_unobserved_in_trial(const std::vector<std::string>& trial_columns,
                                const std::vector<std::string>& modifiers) {
  for (const auto& m : modifiers) {
    if (contains(trial_columns, m)) continue;
    throw Error(ErrorCategory::kUnobservedModifier, "sensitivity",
                "effect modifier '" + m +
                    "' is not observed in the trial. Neither the unweighted nor the weighted "
                    "method can handle it: its interaction with treatment cannot be estimated "
                    "from the trial, and after weighting its mean in the weighted trial is not "
                    "a usable sensitivity parameter. Drop it or measure it in the trial.");
  }
}

}  // namespace tatesens
