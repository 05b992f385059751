#include "tatesens/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tatesens/error.hpp"

namespace tatesens {

namespace {

using Json = nlohmann::ordered_json;

void allow_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw usage_error(where + " must be an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items()) {
    if (!ok.count(k)) throw usage_error("unknown key '" + k + "' in " + where);
  }
}

template <typename T>
T get(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw usage_error(where + " needs '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const Json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  return get<T>(obj, key, where);
}

const Json& object_or_empty(const Json& obj, const char* key) {
  static const Json empty = Json::object();
  return obj.contains(key) ? obj.at(key) : empty;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

TableSource parse_source(const Json& j, const std::string& where, const std::filesystem::path& base,
                         std::initializer_list<const char*> extra) {
  std::vector<const char*> keys = {"path", "columns", "id_column"};
  keys.insert(keys.end(), extra.begin(), extra.end());
  if (!j.is_object()) throw usage_error(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* a) { return k == a; }) == keys.end()) {
      throw usage_error("unknown key '" + k + "' in " + where);
    }
  }
  TableSource src;
  src.path = resolve(base, get<std::string>(j, "path", where));
  src.schema.id_column = j.contains("id_column") && !j["id_column"].is_null()
                             ? std::optional<std::string>(get<std::string>(j, "id_column", where))
                             : std::nullopt;
  if (!j.contains("columns")) throw usage_error(where + " needs 'columns'");
  const Json& cols = j["columns"];
  if (!cols.is_object()) throw usage_error(where + ".columns must be an object");
  for (const auto& [name, decl] : cols.items()) {
    ColumnSchema cs;
    cs.name = name;
    const std::string w = where + ".columns." + name;
    if (decl.is_string()) {
      cs.type = column_type_from_string(decl.get<std::string>());
    } else {
      allow_keys(decl, w, {"type", "levels", "reference"});
      cs.type = column_type_from_string(get<std::string>(decl, "type", w));
      cs.levels = get_or<std::vector<std::string>>(decl, "levels", {}, w);
      if (decl.contains("reference")) cs.reference = get<std::string>(decl, "reference", w);
    }
    src.schema.columns.push_back(std::move(cs));
  }
  return src;
}

std::vector<Term> parse_terms(const Json& j, const std::string& where) {
  std::vector<Term> out;
  for (const auto& s : j.get<std::vector<std::string>>()) {
    (void)where;
    out.push_back(Term::parse(s));
  }
  return out;
}

MeanEstimate parse_mean(const Json& j, const std::string& where) {
  std::vector<double> v;
  if (j.is_number()) {
    v = {j.get<double>()};
  } else {
    try {
      v = j.get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw usage_error(where + " must be a number, [point] or [point, lo, hi]");
    }
  }
  if (v.size() == 1) return MeanEstimate{v[0], {}, {}};
  if (v.size() == 3) return MeanEstimate{v[0], v[1], v[2]};
  throw usage_error(where + " must be [point] or [point, lo, hi]");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("config is not valid JSON: ") + e.what());
  }
  allow_keys(j, "config", {"trial", "population", "roles", "derived", "model", "tate", "sensitivity",
                           "weighting", "coverage", "scan", "output"});
  RunConfig c;
  if (!j.contains("trial")) throw usage_error("config needs 'trial'");
  c.trial = parse_source(j["trial"], "trial", base, {});

  if (!j.contains("population")) throw usage_error("config needs 'population'");
  {
    const Json& p = j["population"];
    const std::string w = "population";
    if (!p.is_object()) throw usage_error("population must be an object");
    c.population_kind = population_kind_from_string(get<std::string>(p, "kind", w));
    if (c.population_kind == PopulationKind::kSummaryStats) {
      allow_keys(p, w, {"kind", "path"});
      c.summary_path = resolve(base, get<std::string>(p, "path", w));
    } else {
      Json rest = p;
      rest.erase("kind");
      c.population = parse_source(rest, w, base, {"trial_identifiable", "membership_column"});
      c.trial_identifiable = get_or<bool>(p, "trial_identifiable", false, w);
      if (p.contains("membership_column") && !p["membership_column"].is_null()) {
        c.membership_column = get<std::string>(p, "membership_column", w);
      }
    }
  }

  if (!j.contains("roles")) throw usage_error("config needs 'roles'");
  {
    const Json& r = j["roles"];
    allow_keys(r, "roles", {"treatment", "outcome", "x", "z", "v"});
    c.roles.treatment = get<std::string>(r, "treatment", "roles");
    const Json& o = r.at("outcome");
    const std::string kind = get<std::string>(o, "type", "roles.outcome");
    if (kind == "single") {
      allow_keys(o, "roles.outcome", {"type", "column"});
      c.roles.outcome = SingleOutcome{get<std::string>(o, "column", "roles.outcome")};
    } else if (kind == "prepost") {
      allow_keys(o, "roles.outcome", {"type", "pre", "post", "response", "period", "subject"});
      PrePostOutcome pp;
      pp.pre = get<std::string>(o, "pre", "roles.outcome");
      pp.post = get<std::string>(o, "post", "roles.outcome");
      pp.response_name = get_or<std::string>(o, "response", "Y", "roles.outcome");
      pp.period_name = get_or<std::string>(o, "period", "F", "roles.outcome");
      pp.subject_name = get_or<std::string>(o, "subject", "subject", "roles.outcome");
      c.roles.outcome = pp;
    } else if (kind == "long") {
      allow_keys(o, "roles.outcome", {"type", "column", "period", "subject"});
      c.roles.outcome = LongOutcome{get<std::string>(o, "column", "roles.outcome"),
                                    get<std::string>(o, "period", "roles.outcome"),
                                    get<std::string>(o, "subject", "roles.outcome")};
    } else {
      throw usage_error("roles.outcome.type must be single, prepost or long");
    }
    c.roles.x_covars = get_or<std::vector<std::string>>(r, "x", {}, "roles");
    c.roles.z_modifiers = get_or<std::vector<std::string>>(r, "z", {}, "roles");
    c.roles.v_modifiers = get_or<std::vector<std::string>>(r, "v", {}, "roles");
  }

  if (j.contains("derived")) {
    for (const auto& d : j["derived"]) {
      allow_keys(d, "derived[]", {"name", "cross_classify"});
      c.derived.push_back(DerivedColumn{get<std::string>(d, "name", "derived[]"),
                                        get<std::vector<std::string>>(d, "cross_classify", "derived[]")});
    }
  }

  if (!j.contains("model")) throw usage_error("config needs 'model'");
  {
    const Json& m = j["model"];
    allow_keys(m, "model", {"terms", "link", "family", "intercept", "random_intercepts", "vcov", "response"});
    c.outcome.model.response = get_or<std::string>(m, "response", "", "model");
    c.outcome.model.terms = parse_terms(m.at("terms"), "model.terms");
    c.outcome.model.link = link_from_string(get_or<std::string>(m, "link", "identity", "model"));
    c.outcome.model.family = family_from_string(get_or<std::string>(m, "family", "gaussian", "model"));
    c.outcome.model.intercept = get_or<bool>(m, "intercept", true, "model");
    c.outcome.random_intercepts = get_or<bool>(m, "random_intercepts", true, "model");
    if (m.contains("vcov") && !m["vcov"].is_null()) {
      c.outcome.vcov = vcov_kind_from_string(get<std::string>(m, "vcov", "model"));
    }
  }

  if (j.contains("tate") && !j["tate"].is_null()) {
    const Json& t = j["tate"];
    allow_keys(t, "tate", {"treatment", "terms"});
    TateSpec spec;
    spec.treatment_coefficient = get<std::string>(t, "treatment", "tate");
    for (const auto& term : t.value("terms", Json::array())) {
      allow_keys(term, "tate.terms[]", {"coefficient", "factors"});
      TateTerm tt;
      tt.coefficient = get<std::string>(term, "coefficient", "tate.terms[]");
      for (const auto& f : get<std::vector<std::string>>(term, "factors", "tate.terms[]")) {
        tt.factors.push_back(MeanFactor::parse(f));
      }
      spec.terms.push_back(std::move(tt));
    }
    c.tate = std::move(spec);
  }

  if (j.contains("sensitivity")) {
    const Json& s = j["sensitivity"];
    const std::string w = "sensitivity";
    allow_keys(s, w, {"ez", "ev_range", "ev_fixed", "sweep_axis", "second_axis", "grid_points", "scale",
                      "ci_level"});
    auto& sc = c.sensitivity;
    for (const auto& [k, v] : object_or_empty(s, "ez").items()) {
      sc.ez[k] = parse_mean(v, w + ".ez." + k);
    }
    for (const auto& [k, v] : object_or_empty(s, "ev_range").items()) {
      std::vector<double> r;
      try {
        r = v.get<std::vector<double>>();
      } catch (const nlohmann::json::exception&) {
      }
      if (r.size() != 2) throw usage_error(w + ".ev_range." + k + " must be [low, high]");
      sc.ev_range[k] = {r[0], r[1]};
      if (sc.sweep_axis.empty()) sc.sweep_axis = k;
    }
    for (const auto& [k, v] : object_or_empty(s, "ev_fixed").items()) {
      sc.ev_fixed[k] = v.get<double>();
    }
    if (s.contains("sweep_axis")) sc.sweep_axis = get<std::string>(s, "sweep_axis", w);
    if (s.contains("second_axis") && !s["second_axis"].is_null()) {
      sc.second_axis = get<std::string>(s, "second_axis", w);
    }
    sc.grid_points = get_or<int>(s, "grid_points", 9, w);
    sc.scale = effect_scale_from_string(get_or<std::string>(s, "scale", "ADDITIVE", w));
    sc.ci_level = get_or<double>(s, "ci_level", 0.95, w);
    sc.validate();
  }

  if (j.contains("weighting")) {
    const Json& wj = j["weighting"];
    const std::string w = "weighting";
    allow_keys(wj, w, {"procedure", "adjust_within_trial", "xz_covars", "full_covars",
                       "participation_terms", "propensity_terms", "balance_adjusted_method1"});
    auto& wp = c.weighting;
    if (wj.contains("procedure") && !wj["procedure"].is_null()) {
      wp.two_step.population_procedure = weight_procedure_from_string(get<std::string>(wj, "procedure", w));
    }
    wp.two_step.adjust_within_trial = get_or<bool>(wj, "adjust_within_trial", true, w);
    wp.xz_covars = get_or<std::vector<std::string>>(wj, "xz_covars", {}, w);
    wp.full_covars = get_or<std::vector<std::string>>(wj, "full_covars", {}, w);
    if (wj.contains("participation_terms")) {
      wp.two_step.participation_terms = parse_terms(wj["participation_terms"], w);
    }
    if (wj.contains("propensity_terms")) {
      wp.two_step.propensity_terms = parse_terms(wj["propensity_terms"], w);
    }
    c.balance_adjusted_method1 = get_or<bool>(wj, "balance_adjusted_method1", false, w);
  }

  if (j.contains("coverage")) {
    const Json& cv = j["coverage"];
    allow_keys(cv, "coverage", {"on_uncovered"});
    const std::string mode = get_or<std::string>(cv, "on_uncovered", "error", "coverage");
    if (mode != "error" && mode != "warn") throw usage_error("coverage.on_uncovered must be error or warn");
    c.coverage_strict = mode == "error";
  }

  if (j.contains("scan")) {
    const Json& sj = j["scan"];
    allow_keys(sj, "scan", {"candidates", "pairs", "threshold"});
    if (sj.contains("candidates")) c.scan_candidates = get<std::vector<std::string>>(sj, "candidates", "scan");
    c.scan_pairs = get_or<bool>(sj, "pairs", true, "scan");
    c.scan_threshold = get_or<double>(sj, "threshold", 1.96, "scan");
  }

  if (j.contains("output")) {
    const Json& oj = j["output"];
    allow_keys(oj, "output", {"dir", "svg"});
    if (oj.contains("dir")) c.output_dir = resolve(base, get<std::string>(oj, "dir", "output"));
    c.svg = get_or<bool>(oj, "svg", true, "output");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::vector<ScenarioSpec> load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot read scenario file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  Json j;
  try {
    j = Json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("scenario file is not valid JSON: ") + e.what());
  }
  std::vector<ScenarioSpec> out;
  if (j.is_array()) {
    for (const auto& s : j) out.push_back(parse_scenario(s.dump()));
  } else {
    out.push_back(parse_scenario(j.dump()));
  }
  if (out.empty()) throw usage_error("scenario file has no scenarios");
  return out;
}

}  // namespace tatesens
