#pragma once

#include <string>
#include <vector>

namespace wap {

struct GradCheckCase {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  // The sensitivity case passes when the checker reports a LARGE error for a
  // deliberately broken gradient.
  bool expect_large = false;
  bool passed = false;
};

// Finite-difference verification of every differentiable piece. With
// `sabotage` set, one real case gets a sign-flipped gradient and must fail.
std::vector<GradCheckCase> run_gradcheck_suite(bool sabotage = false);

}  // namespace wap
