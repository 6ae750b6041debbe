#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kan {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = false;
};

/// Central finite differences (h = 1e-5) against tape gradients for every
/// primitive op, the spline basis derivative, and the full spline-edge layer
/// (parameters and inputs, in-range and clamped). Kinked ops are sampled at
/// least 1e-3 away from their kinks. Pass threshold: relative error < 1e-4,
/// with an absolute 1e-7 fallback when both sides are below 1e-6.
std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed);

bool all_passed(const std::vector<GradCheckResult>& results);

}  // namespace kan
