#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace ldml {

/// A jump of size `weight` in a right-continuous step function at `y`.
struct StepPoint {
  double y = 0.0;
  double weight = 0.0;
};

struct StepSolution {
  double root = 0.0;
  double residual = 0.0;  // g(root)
};

/// Minimizes |g(y)| over the observed y, where g(t) = offset + sum_{y_i <= t} w_i.
/// Points sharing a y are merged first. With `monotone` (every weight >= 0)
/// the sign change is located by binary search, otherwise every prefix sum is
/// scanned. Both paths return the smallest y attaining the minimum.
/// Errors: EmptyPoints, NonFiniteValue.
StepSolution solve_step_equation(std::span<const StepPoint> points, double offset, bool monotone);

/// Exhaustive prefix-sum scan; the reference the binary search must match.
StepSolution scan_step_equation(std::span<const StepPoint> points, double offset);

/// Root of a continuous function that is linear between consecutive
/// `breakpoints` (sorted, unique) and beyond both ends. The bracketing segment
/// is found by binary search and the root solved exactly inside it.
/// Errors: EmptyPoints, SolverNoCandidate (no sign change and no crossing
/// on either outer ray).
double solve_piecewise_linear(std::span<const double> breakpoints,
                              const std::function<double(double)>& fn);

}  // namespace ldml
