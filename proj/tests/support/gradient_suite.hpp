#pragma once

// Catalog of gradient checks: every tape op plus the composite losses. Each
// case draws one random small instance from the given seed.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace testsupport {

struct GradientCase {
  std::string name;
  std::function<GradCheck(std::uint64_t seed)> run;
};

std::vector<GradientCase> op_gradient_cases();
std::vector<GradientCase> composite_gradient_cases();

GradCheck merge(GradCheck a, const GradCheck& b);

}  // namespace testsupport
