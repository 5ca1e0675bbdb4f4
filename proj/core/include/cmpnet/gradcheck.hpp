#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmpnet/tensor.hpp"

namespace cmpnet {

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0;
};

// Central finite differences (step 1e-5) of a randomly weighted scalar output
// against each operator's analytic backward. Relative error uses a unit floor
// since the probe gradients are O(1):  |a-n| / max(1, |a|, |n|).
constexpr double kGradCheckStep = 1e-5;

double grad_rel_err(double analytic, double numeric);

/// Runs the suite for one operator ("cmp", "conv", "dense", "bn", "elu",
/// "maxpool", "gap", "softmax") or for "all".
std::vector<GradCheckResult> run_grad_checks(const std::string& op, std::uint64_t seed);

}  // namespace cmpnet
