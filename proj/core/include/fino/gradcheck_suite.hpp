#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fino/gradcheck.hpp"

namespace fino {

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;
};

// Central-difference gradient checks (64-bit, eps 1e-5) covering every
// differentiable layer type plus the complete fused model at desk shapes:
// 8x8 images over two sampled frames and 64 audio feature frames.
// Deterministic given the seed.
std::vector<GradSuiteCase> gradcheck_suite(std::uint64_t seed);

}  // namespace fino
