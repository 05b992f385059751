#pragma once

#include <span>
#include <string>
#include <vector>

#include "tatesens/sensitivity.hpp"

namespace tatesens {

// Estimate and confidence-limit polylines per method against the sweep axis.
std::string sensitivity_svg(std::span<const SensitivityResult> results, const std::string& title);

struct GroupEffect {
  std::string label;
  double estimate = 0, lower = 0, upper = 0;
};

// Treatment effect in the reference group and in each group named by a
// single-factor TATE term (treatment coefficient plus the interaction).
std::vector<GroupEffect> group_effects(const FittedModel& model, const TateSpec& spec,
                                       double ci_level = 0.95);

// Point and interval per group.
std::string group_effects_svg(const std::vector<GroupEffect>& groups, const std::string& title);

}  // namespace tatesens
