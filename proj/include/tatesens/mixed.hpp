#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tatesens/estimation.hpp"

namespace tatesens {

// Random-intercepts linear model Y_ij = c_i + x_ij'b + e_ij fitted by
// (weighted pseudo-) maximum likelihood.
struct MixedFit {
  FittedModel fixed;
  double between_variance = 0.0;   // var(c_i)
  double residual_variance = 0.0;  // var(e_ij)
  bool between_truncated = false;  // optimum on the zero boundary
  double log_likelihood = 0.0;
  std::size_t n_subjects = 0;
};

struct MixedOptions {
  // Defaults: kClusterSandwich with weights, kModelBased without.
  std::optional<VcovKind> vcov;
  // Require exactly two rows per subject (pre/post layout).
  bool require_two_rows = true;
};

// subject[i] labels row i with a subject index in [0, n_subjects).
// subject_weights, if nonempty, holds one weight per subject.
//
// The variance ratio between/residual is found by a bounded one-dimensional
// search of the profile likelihood; fixed effects are the weighted GLS
// solution at that ratio.
MixedFit fit_random_intercepts(const Design& design, std::span<const std::size_t> subject,
                               std::span<const double> subject_weights = {},
                               const MixedOptions& options = {});

std::string mixed_report(const MixedFit& fit, const std::string& title, double ci_level = 0.95);

}  // namespace tatesens
