#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgseg/tensor.hpp"

namespace cgseg {

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

/// Finite-difference checks in double precision of every layer, one CG head,
/// and both full models on small random instances.
std::vector<GradSuiteEntry> run_grad_suite(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace cgseg
