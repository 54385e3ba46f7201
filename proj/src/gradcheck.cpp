#include "pggcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace pggcn {

GradCheckReport finite_difference_check(const std::function<double()>& loss, Param& p,
                                        double epsilon, double tolerance) {
  GradCheckReport report;
  if (epsilon <= 0.0) {
    report.aborted = true;
    report.message = "epsilon must be positive";
    return report;
  }
  // Coordinates whose analytic AND numeric gradients both sit below this are
  // indistinguishable from zero: the central difference of a ~O(1) loss in
  // double precision carries ~1e-16/(2*eps) of rounding noise, so comparing
  // two such values relatively would only measure that noise. (This happens
  // for real parameters, e.g. a bias feeding straight into batch norm, which
  // the normalization cancels exactly.)
  constexpr double kZeroFloor = 1e-7;
  const Tensor analytic = p.grad;
  for (std::int64_t i = 0; i < p.value.size(); ++i) {
    const double saved = p.value[i];
    p.value[i] = saved + epsilon;
    const double f_plus = loss();
    p.value[i] = saved - epsilon;
    const double f_minus = loss();
    p.value[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      report.aborted = true;
      report.pass = false;
      report.message = "non-finite loss while probing coordinate " + std::to_string(i);
      return report;
    }
    const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
    if (std::abs(analytic[i]) < kZeroFloor && std::abs(numeric) < kZeroFloor) continue;
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  report.pass = report.max_relative_error <= tolerance;
  return report;
}

bool suite_passed(const std::vector<SuiteEntry>& entries) {
  return std::all_of(entries.begin(), entries.end(),
                     [](const SuiteEntry& e) { return e.report.pass; });
}

}  // namespace pggcn
