#pragma once

// Small worlds whose population expectations are exact finite sums, plus
// brute-force reference solvers. Everything here is independent of the
// library's own solvers so it can serve as an oracle.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "ldml/data.hpp"
#include "ldml/estimands.hpp"
#include "ldml/normal.hpp"
#include "ldml/random.hpp"

namespace toy {

using NuisanceFn = std::function<std::vector<double>(double x)>;

/// X in {0,1}; T ~ Bernoulli(pi(X)); Y | X, T=1 on four atoms.
struct DiscreteWorld {
  double p_x1 = 0.4;
  std::array<double, 2> pi{0.35, 0.7};
  std::array<double, 4> support{0.5, 1.5, 2.5, 3.5};
  std::array<std::array<double, 4>, 2> pmf{{{0.4, 0.3, 0.2, 0.1}, {0.1, 0.2, 0.3, 0.4}}};

  double px(int x) const { return x == 1 ? p_x1 : 1.0 - p_x1; }

  double cdf(double theta, int x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      if (support[j] <= theta) s += pmf[x][j];
    }
    return s;
  }
  double excess(double theta, int x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += pmf[x][j] * std::max(support[j] - theta, 0.0);
    return s;
  }
  double mean(int x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += pmf[x][j] * support[j];
    return s;
  }

  /// Level at which theta = 1.5 is an exact population gamma-quantile.
  double quantile_gamma() const { return px(0) * cdf(1.5, 0) + px(1) * cdf(1.5, 1); }

  /// Calls fn(observation, mass, x) for every atom of (X, T, Y).
  template <class Fn>
  void for_each_atom(Fn fn) const {
    for (int x = 0; x < 2; ++x) {
      fn(ldml::Observation{0.0, 0, 0}, px(x) * (1.0 - pi[x]), x);
      for (std::size_t j = 0; j < 4; ++j) {
        fn(ldml::Observation{support[j], 1, 0}, px(x) * pi[x] * pmf[x][j], x);
      }
    }
  }

  /// P psi(theta, eta1, eta2) by exact enumeration.
  std::vector<double> population_moment(const ldml::MomentModel& m, std::span<const double> theta,
                                        const NuisanceFn& eta1, const NuisanceFn& eta2) const {
    std::vector<double> total(m.dim(), 0.0), out(m.dim());
    for_each_atom([&](const ldml::Observation& obs, double mass, int x) {
      const auto e1 = eta1(x);
      const auto e2 = eta2(x);
      m.psi(obs, theta, {e1, e2, 1.0}, out);
      for (std::size_t j = 0; j < out.size(); ++j) total[j] += mass * out[j];
    });
    return total;
  }
};

/// X in {0,1} with P(X=1)=0.4, pi(x) = {0.45, 0.75}, Y(1) | X ~ N(X, 1).
struct GaussianWorld {
  double p_x1 = 0.4;
  std::array<double, 2> pi{0.45, 0.75};

  double propensity(double x) const { return x > 0.5 ? pi[1] : pi[0]; }
  double cdf(double theta, double x) const { return ldml::normal_cdf(theta - x); }
  double marginal_cdf(double theta) const {
    return (1.0 - p_x1) * cdf(theta, 0.0) + p_x1 * cdf(theta, 1.0);
  }

  /// Population gamma-quantile of Y(1), by bisection on the exact CDF.
  double quantile(double gamma) const {
    double lo = -10.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (marginal_cdf(mid) < gamma ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  ldml::ObservationTable sample(std::size_t n, std::uint64_t seed) const {
    ldml::Rng rng(seed);
    ldml::Matrix x(static_cast<Eigen::Index>(n), 1);
    std::vector<int> t(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = rng.uniform() < p_x1 ? 1.0 : 0.0;
      x(static_cast<Eigen::Index>(i), 0) = xi;
      t[i] = rng.bernoulli(propensity(xi)) ? 1 : 0;
      y[i] = xi + rng.normal();
    }
    return ldml::ObservationTable(std::move(x), std::move(t), std::move(y));
  }
};

/// g(t) = offset + sum_{y_i <= t} w_i evaluated independently at each candidate;
/// returns the smallest candidate minimizing |g|.
inline double brute_force_step_root(const std::vector<double>& ys, const std::vector<double>& ws,
                                    double offset) {
  std::vector<double> candidates = ys;
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  double best = candidates.front();
  double best_abs = std::numeric_limits<double>::infinity();
  for (double c : candidates) {
    double g = offset;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (ys[i] <= c) g += ws[i];
    }
    if (std::abs(g) < best_abs) {
      best_abs = std::abs(g);
      best = c;
    }
  }
  return best;
}

}  // namespace toy
