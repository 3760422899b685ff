#include <cmath>

#include <gtest/gtest.h>

#include "ldml/engine.hpp"
#include "ldml/estimands.hpp"
#include "ldml/random.hpp"
#include "support/toy.hpp"

using namespace ldml;

namespace {

std::vector<double> eval(const MomentModel& m, Observation obs, std::vector<double> theta,
                         std::vector<double> eta1, std::vector<double> eta2, double nu = 1.0) {
  std::vector<double> out(m.dim());
  m.psi(obs, theta, {eta1, eta2, nu}, out);
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ldml::Error thrown";
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(QuantileMoment, Examples) {
  const auto m = quantile_moment(0.5);
  EXPECT_DOUBLE_EQ(eval(*m, {3.0, 0, 0}, {1.0}, {0.5}, {0.4})[0], 0.0);
  EXPECT_NEAR(eval(*m, {0.2, 1, 0}, {0.5}, {0.3}, {0.5})[0], 1.2, 1e-15);
  for (double y : {-1.0, 0.5, 2.0}) {
    EXPECT_DOUBLE_EQ(eval(*m, {y, 1, 0}, {0.5}, {0.0}, {1.0})[0], (y <= 0.5 ? 1.0 : 0.0) - 0.5);
  }
  // Weak inequality at the boundary.
  EXPECT_DOUBLE_EQ(eval(*m, {0.5, 1, 0}, {0.5}, {0.0}, {1.0})[0], 0.5);
}

TEST(IpwMoment, Examples) {
  const auto m = ipw_moment(complete_quantile(0.5), SolverHint::kMonotoneStep);
  EXPECT_DOUBLE_EQ(eval(*m, {9.0, 0, 0}, {1.0}, {}, {0.3})[0], -0.5);
  EXPECT_DOUBLE_EQ(eval(*m, {0.5, 1, 0}, {1.0}, {}, {0.25})[0], 3.5);
}

TEST(IpwMoment, RootOnThreeTreatedPoints) {
  const auto m = ipw_moment(complete_quantile(0.5), SolverHint::kMonotoneStep);
  const ObservationTable t(Matrix::Zero(3, 1), {1, 1, 1}, {3.0, 1.0, 2.0});
  NuisanceValues v;
  v.eta1 = Matrix(3, 0);
  v.eta2 = Matrix::Ones(3, 1);
  EXPECT_EQ(solve_moment(t, *m, v), std::vector<double>{2.0});
}

TEST(QuantileCvarMoment, Examples) {
  const double g = 2.0 / 3.0;
  const auto m = quantile_cvar_moment(g);
  const double theta1 = 0.7, excess = 0.4;
  const auto zero = eval(*m, {5.0, 0, 0}, {theta1, theta1 + excess / (1 - g)}, {g, excess}, {0.5});
  EXPECT_NEAR(zero[0], 0.0, 1e-15);
  EXPECT_NEAR(zero[1], 0.0, 1e-15);

  const auto v = eval(*m, {3.0, 1, 0}, {2.0, 3.0}, {0.5, 0.4}, {0.5});
  EXPECT_NEAR(v[0], -1.1667, 5e-5);
  EXPECT_NEAR(v[1], 3.8, 1e-12);
}

TEST(ExpectileMoment, Examples) {
  const auto half = expectile_moment(0.5);
  for (double y : {-2.0, 0.3, 4.0}) {
    EXPECT_NEAR(eval(*half, {y, 1, 0}, {1.0}, {0.0}, {0.0, 1.0})[0], 0.5 * (y - 1.0), 1e-15);
  }
  // The corrected non-weighted bracket (1-g)(eta21 - theta1) - (1-2g) eta1.
  const auto q = expectile_moment(0.25);
  EXPECT_NEAR(eval(*q, {2.0, 1, 0}, {1.0}, {0.3}, {1.5, 0.5})[0], 0.275, 1e-15);
  EXPECT_NEAR(eval(*q, {7.0, 0, 0}, {1.0}, {0.3}, {1.5, 0.5})[0], 0.75 * 0.5 - 0.5 * 0.3, 1e-15);
}

TEST(LqteMoment, Examples) {
  EXPECT_DOUBLE_EQ(eval(*lqte_moment(0.25), {0.0, 1, 1}, {1.0}, {0.0, 0.0}, {0.5}, 1.0)[0], 1.75);
  EXPECT_NEAR(eval(*lqte_moment(0.5), {0.0, 0, 0}, {1.0}, {0.6, 0.4}, {0.5}, 0.5)[0], 1.5, 1e-15);
  // With eta11 = 1 the residual vanishes and eta11 - eta12 = 1 is left; the
  // level is kept inside (0,1) and subtracted back out.
  const double g = 0.25;
  EXPECT_DOUBLE_EQ(eval(*lqte_moment(g), {0.0, 1, 1}, {1.0}, {1.0, 0.0}, {1.0}, 1.0)[0] + g, 1.0);
  EXPECT_TRUE(lqte_moment(0.5)->requires_instrument());
  EXPECT_TRUE(lqte_moment(0.5)->uses_nu());
}

TEST(MakeMoment, NamesAndGuards) {
  for (const char* name : {"quantile", "quantile_cvar", "expectile", "lqte"}) {
    EXPECT_EQ(make_moment(name, 0.3)->gamma(), 0.3);
  }
  EXPECT_EQ(make_moment("quantile_cvar", 0.3)->dim(), 2u);
  EXPECT_EQ(code_of([] { make_moment("median", 0.5); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([] { make_moment("quantile", 0.0); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([] { make_moment("quantile", 1.0); }), ErrorCode::kConfigError);
}

// Exact population checks on the discrete world.

namespace {

struct Setup {
  MomentPtr moment;
  std::vector<double> theta;
  toy::NuisanceFn eta1;  // true localized nuisances at theta
  toy::NuisanceFn eta2;
};

std::vector<Setup> setups(const toy::DiscreteWorld& w) {
  const double gq = w.quantile_gamma();
  std::vector<Setup> out;
  out.push_back({quantile_moment(gq), {1.5},
                 [&w](double x) { return std::vector<double>{w.cdf(1.5, static_cast<int>(x))}; },
                 [&w](double x) { return std::vector<double>{w.pi[static_cast<int>(x)]}; }});
  // Population CVaR at the quantile 1.5 of Y(1).
  double excess = 0.0;
  for (int x = 0; x < 2; ++x) excess += w.px(x) * w.excess(1.5, x);
  out.push_back({quantile_cvar_moment(gq), {1.5, 1.5 + excess / (1.0 - gq)},
                 [&w](double x) {
                   const int xi = static_cast<int>(x);
                   return std::vector<double>{w.cdf(1.5, xi), w.excess(1.5, xi)};
                 },
                 [&w](double x) { return std::vector<double>{w.pi[static_cast<int>(x)]}; }});
  out.push_back({expectile_moment(0.3), {1.9},
                 [&w](double x) { return std::vector<double>{w.excess(1.9, static_cast<int>(x))}; },
                 [&w](double x) {
                   const int xi = static_cast<int>(x);
                   return std::vector<double>{w.mean(xi), w.pi[xi]};
                 }});
  return out;
}

}  // namespace

TEST(Orthogonality, QuantileMomentVanishesAtTruth) {
  const toy::DiscreteWorld w;
  const auto s = setups(w).front();
  const auto value = w.population_moment(*s.moment, s.theta, s.eta1, s.eta2);
  EXPECT_NEAR(value[0], 0.0, 1e-15);
}

TEST(Orthogonality, PopulationMomentIgnoresEta1UnderTruePropensity) {
  const toy::DiscreteWorld w;
  Rng rng(3);
  for (const auto& s : setups(w)) {
    const auto base = w.population_moment(*s.moment, s.theta, s.eta1, s.eta2);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::vector<double>> alt(2, std::vector<double>(s.moment->eta1_tasks().size()));
      for (auto& a : alt) {
        for (double& v : a) v = 4.0 * rng.uniform() - 2.0;
      }
      const auto other = w.population_moment(
          *s.moment, s.theta, [&](double x) { return alt[static_cast<int>(x)]; }, s.eta2);
      for (std::size_t j = 0; j < base.size(); ++j) {
        EXPECT_NEAR(other[j], base[j], 1e-12) << s.moment->name() << " component " << j;
      }
    }
  }
}

TEST(Orthogonality, CentralDifferenceInNuisanceDirectionVanishes) {
  const toy::DiscreteWorld w;
  Rng rng(11);
  const double step = 1e-4;
  for (const auto& s : setups(w)) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t e1 = s.moment->eta1_tasks().size();
      const std::size_t e2 = s.moment->eta2_tasks().size();
      std::vector<std::vector<double>> d1(2, std::vector<double>(e1)), d2(2, std::vector<double>(e2));
      for (int x = 0; x < 2; ++x) {
        for (double& v : d1[x]) v = rng.uniform() - 0.5;
        for (double& v : d2[x]) v = 0.2 * rng.uniform() - 0.1;
      }
      auto at = [&](double r) {
        auto eta1 = [&](double x) {
          auto v = s.eta1(x);
          for (std::size_t j = 0; j < v.size(); ++j) v[j] += r * d1[static_cast<int>(x)][j];
          return v;
        };
        auto eta2 = [&](double x) {
          auto v = s.eta2(x);
          for (std::size_t j = 0; j < v.size(); ++j) v[j] += r * d2[static_cast<int>(x)][j];
          return v;
        };
        return w.population_moment(*s.moment, s.theta, eta1, eta2);
      };
      const auto plus = at(step);
      const auto minus = at(-step);
      for (std::size_t j = 0; j < plus.size(); ++j) {
        EXPECT_LE(std::abs(plus[j] - minus[j]) / (2 * step), 1e-7)
            << s.moment->name() << " component " << j;
      }
    }
  }
}

TEST(Orthogonality, LqteMomentIgnoresEta1UnderTrueInstrumentPropensity) {
  // Two-point X, W ~ Bernoulli(q(X)), T = W: E[(W/q - (1-W)/(1-q)) g(X)] = 0.
  const auto m = lqte_moment(0.4);
  const std::array<double, 2> q{0.3, 0.6};
  const std::array<double, 2> px{0.5, 0.5};
  auto population = [&](const std::array<std::array<double, 2>, 2>& eta1) {
    double total = 0.0;
    std::vector<double> out(1);
    for (int x = 0; x < 2; ++x) {
      for (int wv = 0; wv < 2; ++wv) {
        for (double y : {0.0, 1.0, 2.0}) {
          const double mass = px[x] * (wv ? q[x] : 1 - q[x]) / 3.0;
          const std::vector<double> e1{eta1[x][0], eta1[x][1]}, e2{q[x]};
          m->psi({y, wv, wv}, std::vector<double>{1.0}, {e1, e2, 0.8}, out);
          total += mass * out[0];
        }
      }
    }
    return total;
  };
  const double a = population({{{0.1, 0.2}, {0.3, 0.9}}});
  const double b = population({{{0.7, -0.4}, {0.0, 0.5}}});
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(StepShape, QuantileEquationIsNondecreasingStepFunction) {
  Rng rng(21);
  const auto m = quantile_moment(0.4);
  const std::size_t n = 60;
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), 1);
  std::vector<int> t(n);
  std::vector<double> y(n);
  NuisanceValues v;
  v.eta1 = Matrix(static_cast<Eigen::Index>(n), 1);
  v.eta2 = Matrix(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = rng.bernoulli(0.6) ? 1 : 0;
    y[i] = std::round(rng.normal() * 4.0) / 4.0;  // ties on purpose
    v.eta1(static_cast<Eigen::Index>(i), 0) = rng.uniform();
    v.eta2(static_cast<Eigen::Index>(i), 0) = 0.1 + 0.8 * rng.uniform();
  }
  const ObservationTable table(x, t, y);
  auto mean_at = [&](double theta) {
    const std::vector<double> th{theta};
    return psi_rows(table, *m, th, v).col(0).mean();
  };
  double previous = -std::numeric_limits<double>::infinity();
  for (double theta = -12.0; theta <= 12.0; theta += 0.01) {
    const double g = mean_at(theta);
    ASSERT_GE(g, previous - 1e-12);
    previous = g;
  }
  // Jumps only at treated outcomes: constant strictly between sorted outcomes.
  std::vector<double> treated;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i] == 1) treated.push_back(y[i]);
  }
  std::sort(treated.begin(), treated.end());
  for (std::size_t i = 0; i + 1 < treated.size(); ++i) {
    if (treated[i] == treated[i + 1]) continue;
    EXPECT_NEAR(mean_at(treated[i]), mean_at(0.5 * (treated[i] + treated[i + 1])), 1e-12);
  }
}

TEST(StepShape, ExpectileEquationIsStrictlyDecreasingAndPiecewiseLinear) {
  Rng rng(22);
  const auto m = expectile_moment(0.3);
  const std::size_t n = 40;
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), 1);
  std::vector<int> t(n);
  std::vector<double> y(n);
  NuisanceValues v;
  v.eta1 = Matrix(static_cast<Eigen::Index>(n), 1);
  v.eta2 = Matrix(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = rng.bernoulli(0.6) ? 1 : 0;
    y[i] = rng.normal();
    v.eta1(static_cast<Eigen::Index>(i), 0) = rng.uniform();
    v.eta2(static_cast<Eigen::Index>(i), 0) = rng.normal();
    v.eta2(static_cast<Eigen::Index>(i), 1) = 0.2 + 0.6 * rng.uniform();
  }
  const ObservationTable table(x, t, y);
  auto mean_at = [&](double theta) {
    const std::vector<double> th{theta};
    return psi_rows(table, *m, th, v).col(0).mean();
  };
  double previous = std::numeric_limits<double>::infinity();
  for (double theta = -4.0; theta <= 4.0; theta += 0.01) {
    const double g = mean_at(theta);
    ASSERT_LT(g, previous);
    previous = g;
  }
  const auto root = solve_moment(table, *m, v);
  EXPECT_NEAR(mean_at(root[0]), 0.0, 1e-12);
}
