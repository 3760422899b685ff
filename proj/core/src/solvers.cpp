#include "ldml/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ldml/error.hpp"

namespace ldml {
namespace {

struct PrefixSums {
  std::vector<double> y;
  std::vector<double> g;
};

PrefixSums prefix_sums(std::span<const StepPoint> points, double offset) {
  if (points.empty()) throw Error(ErrorCode::kEmptyPoints, "step equation has no candidate points");
  if (!std::isfinite(offset)) throw Error(ErrorCode::kNonFiniteValue, "step equation offset");
  std::vector<StepPoint> sorted(points.begin(), points.end());
  for (const auto& p : sorted) {
    if (!std::isfinite(p.y) || !std::isfinite(p.weight)) {
      throw Error(ErrorCode::kNonFiniteValue, "step equation point");
    }
  }
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const StepPoint& a, const StepPoint& b) { return a.y < b.y; });
  PrefixSums out;
  double running = offset;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    running += sorted[i].weight;
    if (!out.y.empty() && out.y.back() == sorted[i].y) {
      out.g.back() = running;
    } else {
      out.y.push_back(sorted[i].y);
      out.g.push_back(running);
    }
  }
  return out;
}

StepSolution scan(const PrefixSums& s) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < s.g.size(); ++j) {
    if (std::abs(s.g[j]) < std::abs(s.g[best])) best = j;
  }
  return {s.y[best], s.g[best]};
}

}  // namespace

StepSolution scan_step_equation(std::span<const StepPoint> points, double offset) {
  return scan(prefix_sums(points, offset));
}

StepSolution solve_step_equation(std::span<const StepPoint> points, double offset, bool monotone) {
  const PrefixSums s = prefix_sums(points, offset);
  if (!monotone) return scan(s);

  const auto first_nonneg = std::lower_bound(s.g.begin(), s.g.end(), 0.0);
  std::size_t j = static_cast<std::size_t>(first_nonneg - s.g.begin());
  if (j == s.g.size()) {
    j = s.g.size() - 1;
  } else if (j > 0 && std::abs(s.g[j - 1]) <= std::abs(s.g[j])) {
    j = j - 1;
  } else {
    return {s.y[j], s.g[j]};
  }
  while (j > 0 && s.g[j - 1] == s.g[j]) --j;
  return {s.y[j], s.g[j]};
}

double solve_piecewise_linear(std::span<const double> breakpoints,
                              const std::function<double(double)>& fn) {
  if (breakpoints.empty()) throw Error(ErrorCode::kEmptyPoints, "no breakpoints");
  const std::size_t n = breakpoints.size();
  const double first = breakpoints.front();
  const double last = breakpoints.back();
  const double f_first = fn(first);
  if (f_first == 0.0) return first;
  const double f_last = n == 1 ? f_first : fn(last);
  if (f_last == 0.0) return last;

  if (std::signbit(f_first) != std::signbit(f_last)) {
    std::size_t lo = 0, hi = n - 1;
    double f_lo = f_first, f_hi = f_last;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      const double f_mid = fn(breakpoints[mid]);
      if (f_mid == 0.0) return breakpoints[mid];
      if (std::signbit(f_mid) == std::signbit(f_lo)) {
        lo = mid;
        f_lo = f_mid;
      } else {
        hi = mid;
        f_hi = f_mid;
      }
    }
    return breakpoints[lo] + f_lo * (breakpoints[hi] - breakpoints[lo]) / (f_lo - f_hi);
  }

  // No sign change on the breakpoints: the root, if any, is on an outer ray.
  const double step = std::max(1.0, last - first);
  const double slope_left = (f_first - fn(first - step)) / step;
  const double slope_right = (fn(last + step) - f_last) / step;
  const bool left_ok = slope_left != 0.0 && f_first / slope_left > 0.0;
  const bool right_ok = slope_right != 0.0 && f_last / slope_right < 0.0;
  if (left_ok && (!right_ok || std::abs(f_first) <= std::abs(f_last))) {
    return first - f_first / slope_left;
  }
  if (right_ok) return last - f_last / slope_right;
  throw Error(ErrorCode::kSolverNoCandidate, "piecewise-linear equation has no root");
}

}  // namespace ldml
