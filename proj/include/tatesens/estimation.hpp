#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tatesens/design.hpp"

namespace tatesens {

enum class VcovKind { kModelBased, kSandwich, kClusterSandwich };

std::string to_string(VcovKind k);
VcovKind vcov_kind_from_string(const std::string& s);

struct Convergence {
  int iterations = 0;
  double criterion = 0.0;
  bool converged = true;
  std::vector<double> deviance_trace;
  // log-binomial only: some fitted probability is within 1e-6 of one
  bool near_boundary = false;
};

struct FittedModel {
  std::vector<std::string> names;
  Eigen::VectorXd coef;
  Eigen::MatrixXd vcov;
  VcovKind vcov_kind = VcovKind::kModelBased;
  Link link = Link::kIdentity;
  Family family = Family::kGaussian;
  std::size_t n_obs = 0;
  bool weights_used = false;
  // Residual degrees of freedom for t-based inference; nullopt means z.
  std::optional<double> df;
  Convergence convergence;
  std::vector<TermSpan> terms;
  Eigen::VectorXd fitted;  // response scale
  double deviance = 0.0;

  std::optional<std::size_t> index_of(const std::string& name) const;
  bool has(const std::string& name) const { return index_of(name).has_value(); }
  double coefficient(const std::string& name) const;
  double std_error(const std::string& name) const;
};

struct FitOptions {
  // Defaults to kSandwich when weights are supplied, kModelBased otherwise.
  std::optional<VcovKind> vcov;
  // Cluster label per row; required for kClusterSandwich.
  std::vector<std::size_t> clusters;
  int max_iterations = 100;
  double tolerance = 1e-10;
  // |coefficient| beyond this on the linear-predictor scale is taken as
  // evidence of separation.
  double separation_threshold = 30.0;
};

// Weighted least squares, identity link. weights may be empty.
FittedModel fit_wls(const Design& design, std::span<const double> weights = {},
                    const FitOptions& options = {});

// Iteratively reweighted least squares with step-halving.
// Supported: logit/binomial, log/poisson, log/binomial.
FittedModel fit_glm_irls(const Design& design, Link link, Family family,
                         std::span<const double> weights = {}, const FitOptions& options = {});

// Builds the design and dispatches on the spec's link.
FittedModel fit_model(const DataTable& table, const ModelSpec& spec,
                      std::span<const double> weights = {}, const FitOptions& options = {});

struct LinComResult {
  double estimate = 0.0;
  double std_error = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

using Combination = std::vector<std::pair<std::string, double>>;

// Two-sided critical value: t quantile when df is set, normal otherwise.
double critical_value(std::optional<double> df, double ci_level);

// estimate = c'b, se = sqrt(c' V c), CI on the model's inference basis.
LinComResult lincom(const FittedModel& model, const Combination& combo, double ci_level = 0.95);

// Plain-text coefficient table: estimate, std. error, df (t models),
// statistic, confidence limits, followed by vcov kind and convergence.
std::string coefficient_report(const FittedModel& model, const std::string& title,
                               double ci_level = 0.95);

// Fixed six-significant-digit rendering used by every text output.
std::string fmt6(double v);

}  // namespace tatesens
