#pragma once

#include <cstdint>
#include <string>

#include "tatesens/data.hpp"

namespace tatesens {

// Synthetic trial (933 rows, 478 treated) with pre/post CD4 counts and a
// 54,220-row population with age group, sex and race. Treatment effect varies
// by race and SIS.
struct IllustrationData {
  DataTable trial;       // id, A, age, agegrp, female, race, sis, cd4_0, cd4_1
  DataTable population;  // agegrp, female, race
};

IllustrationData make_illustration_data(std::uint64_t seed = 933);

// Summary-statistics text (z means and the joint female x race cells) of a
// population table.
std::string illustration_summary_stats(const DataTable& population);

}  // namespace tatesens
