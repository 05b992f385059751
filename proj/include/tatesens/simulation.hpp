#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tatesens/data.hpp"
#include "tatesens/design.hpp"

namespace tatesens {

enum class Misspecification { kNone, kZ, kV };
std::string to_string(Misspecification m);
Misspecification misspecification_from_string(const std::string& s);

// Data-generating model.
//
// Population: X ~ N(0,1); (Z, V) bivariate normal with means (mean_z, mean_v),
// unit variances and correlation rho_zv.
// Trial: the same law with means shifted by (shift_x, shift_z,
// rho_zv * shift_z + shift_v), i.e. selection by exponential tilting on X and
// Z plus an extra trial-only tilt on V.
// Outcome linear predictor:
//   b0 + ba A + bx X + bz Z + bza Z A + bv V + bva V A
//      + bzza (Z^2 - 1) A + bvva (V^2 - 1) A
// with N(0, sigma^2) noise (identity link) or Bernoulli (logit link).
// The analysis model is always linear in Z and V, so bzza / bvva are the
// misspecified components.
struct ScenarioSpec {
  std::string name = "scenario";
  Misspecification misspecification = Misspecification::kNone;
  Link link = Link::kIdentity;
  double b0 = 0, ba = 1, bx = 0.5, bz = 0.5, bza = 0.5, bv = 0.5, bva = 0.5;
  double bzza = 0, bvva = 0;
  double sigma = 1;
  double rho_zv = 0.5;
  double mean_z = 0, mean_v = 0;
  double shift_x = 0.3, shift_z = 0.5, shift_v = 0.3;
  double p_treat = 0.5;
  std::size_t n_trial = 500, n_pop = 5000;
  std::size_t replicates = 2000;
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: hardware concurrency

  void validate() const;
  // TATE on the link scale from the parameters alone.
  double true_tate() const;
};

ScenarioSpec parse_scenario(const std::string& json_text);
ScenarioSpec load_scenario(const std::string& path);

// Per-replicate seed from (seed, replicate index) via splitmix64.
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t rep);

struct Replicate {
  DataTable trial;  // A, X, Z, V, Y
  DataTable population;  // X, Z
  double true_tate = 0;
};

// Deterministic in (spec.seed, rep).
Replicate generate_replicate(const ScenarioSpec& spec, std::size_t rep);

struct MethodEval {
  std::string method;  // "M1", "M2", "M2-model-based"
  double bias = 0, bias_mcse = 0;
  double sd = 0, sd_mcse = 0;
  double mean_se = 0, mean_se_mcse = 0;
  double coverage = 0, coverage_mcse = 0;
};

struct EvalReport {
  std::string scenario;
  double true_tate = 0;
  std::size_t replicates = 0;  // successful
  std::size_t failures = 0;
  bool mcse_defined = true;    // false with a single replicate
  std::vector<MethodEval> methods;

  const MethodEval& method(const std::string& name) const;
};

// Both methods per replicate at the true E[V|P=1]. Method 2 is also refit
// with model-based variance ("M2-model-based"). Fails when more than 1% of
// replicates fail to fit.
EvalReport evaluate(const ScenarioSpec& spec);

struct VarianceComparison {
  double sd_ratio = 0;             // SD(M2) / SD(M1)
  double model_based_ratio = 0;    // mean model-based SE(M2) / SD(M2)
  double sandwich_ratio = 0;       // mean sandwich SE(M2) / SD(M2)
  bool m2_more_variable = false;
  bool model_based_understates = false;
  bool sandwich_closer = false;
};

VarianceComparison variance_comparison(const EvalReport& report);
VarianceComparison variance_comparison(const ScenarioSpec& spec);

// scenario,method,replicates,failures,true_tate,bias,bias_mcse,sd,sd_mcse,
// mean_se,mean_se_mcse,coverage,coverage_mcse,note
std::string eval_report_csv(const std::vector<EvalReport>& reports);

}  // namespace tatesens
