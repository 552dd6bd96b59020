#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dyntask/tape.hpp"

namespace dyntask {

struct GradCheckCase {
  std::string name;
  std::vector<Tensor> inputs;
  // Rebuilds the graph from input values on a fresh tape; returns the output
  // and one differentiable node per input. Non-scalar outputs are contracted
  // with a fixed random tensor.
  std::function<std::pair<Var, std::vector<Var>>(Tape&, const std::vector<Tensor>&)> build;
  std::size_t max_coords = 0;  // per input; 0 checks every coordinate
};

struct GradCheckResult {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;  // max |analytic - numeric| / (max |analytic| + 1e-8)
  std::size_t coords = 0;
  double seconds = 0.0;
  bool passed = false;
};

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

GradCheckResult run_gradcheck(const GradCheckCase& c, std::uint64_t seed,
                              double step = kGradCheckStep, double tol = kGradCheckTolerance);

// Registered tensor ops followed by the five losses (L_s1, L_c, L1, L2, L3).
const std::vector<std::string>& gradcheck_names();
const std::vector<std::string>& gradcheck_loss_names();
GradCheckCase make_gradcheck_case(const std::string& name, std::uint64_t seed);
std::vector<GradCheckResult> run_gradcheck_suite(const std::vector<std::string>& names,
                                                 std::uint64_t seed);

}  // namespace dyntask
