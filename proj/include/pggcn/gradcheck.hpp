#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pggcn/tensor.hpp"

namespace pggcn {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::int64_t worst_index = -1;
  bool pass = false;
  bool aborted = false;  // non-finite loss encountered during probing
  std::string message;
};

/// Central-difference verification of an analytic gradient.
///
/// The caller runs one forward/backward at the unperturbed point so that
/// p.grad holds the analytic gradient, then passes a loss() that re-evaluates
/// the objective at the current p.value. Each coordinate i is probed with
/// (loss(p + eps*e_i) - loss(p - eps*e_i)) / (2*eps) and compared against
/// p.grad[i] using max(|analytic|, |numeric|, 1e-8) as the denominator.
/// Coordinates where both values are below 1e-7 count as agreement: they are
/// under the rounding-noise floor of the central difference itself.
GradCheckReport finite_difference_check(const std::function<double()>& loss, Param& p,
                                        double epsilon, double tolerance);

struct SuiteEntry {
  std::string name;
  GradCheckReport report;
};

/// Gradient checks for every layer family plus the end-to-end tiny model.
/// Runs in double precision at epsilon 1e-5, tolerance 1e-4.
std::vector<SuiteEntry> run_gradient_suite(std::uint64_t seed);
bool suite_passed(const std::vector<SuiteEntry>& entries);

}  // namespace pggcn
