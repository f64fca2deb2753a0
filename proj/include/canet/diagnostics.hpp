#pragma once

#include <string>
#include <vector>

#include "canet/gradcheck.hpp"

namespace canet {

struct SuiteCheck {
  std::string name;
  GradCheckReport report;
};

// Central-difference checks for every layer and both full models, across
// `seeds` random seeds each. All small-dimension, CPU-cheap configurations.
std::vector<SuiteCheck> gradient_suite(std::size_t seeds = 5, double tol = 1e-4);

bool all_pass(const std::vector<SuiteCheck>& checks);

}  // namespace canet
