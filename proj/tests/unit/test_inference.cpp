#include <cmath>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "ldml/engine.hpp"
#include "ldml/inference.hpp"
#include "ldml/normal.hpp"
#include "ldml/random.hpp"

using namespace ldml;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ldml::Error thrown";
  return ErrorCode::kInvalidArgument;
}

ObservationTable treated_table(const std::vector<double>& y) {
  return ObservationTable(Matrix::Zero(static_cast<Eigen::Index>(y.size()), 1),
                          std::vector<int>(y.size(), 1), y);
}

Matrix rows(std::initializer_list<std::initializer_list<double>> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()),
           static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST(Normal, KnownValues) {
  EXPECT_NEAR(normal_pdf(0.0), 0.398942280401433, 1e-15);
  EXPECT_NEAR(normal_cdf(3.0), 0.998650101968370, 1e-14);
  EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double p = rng.uniform();
    if (p == 0.0) continue;
    EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-12);
  }
}

TEST(Kde, SinglePointStandardNormal) {
  const auto table = treated_table({0.0});
  KdeOptions opts;
  opts.self_normalize = false;
  opts.bandwidth = 1.0;
  const std::vector<double> pi{1.0};
  const auto j = estimate_jacobian_kde(table, pi, 0.0, KdeMode::kTreated, opts);
  EXPECT_NEAR(j.matrix(0, 0), 0.398942, 1e-6);
  EXPECT_EQ(j.bandwidth, 1.0);
}

TEST(Kde, EqualWeightsCancelUnderSelfNormalization) {
  const auto table = treated_table({0.1, 0.7, -0.4, 1.3, 0.2});
  KdeOptions plain;
  plain.self_normalize = false;
  const std::vector<double> ones(5, 1.0), halves(5, 0.5);
  const double unweighted = estimate_jacobian_kde(table, ones, 0.3, KdeMode::kTreated, plain).matrix(0, 0);
  const double weighted = estimate_jacobian_kde(table, halves, 0.3, KdeMode::kTreated).matrix(0, 0);
  EXPECT_NEAR(weighted, unweighted, 1e-14);
}

TEST(Kde, IntegratesToOne) {
  Rng rng(4);
  std::vector<double> y(32);
  for (double& v : y) v = rng.normal();
  const auto table = treated_table(y);
  KdeOptions plain;
  plain.self_normalize = false;
  const std::vector<double> ones(32, 1.0);
  const double h = rule_of_thumb_bandwidth(y);
  const double lo = *std::min_element(y.begin(), y.end()) - 12 * h;
  const double hi = *std::max_element(y.begin(), y.end()) + 12 * h;
  const int steps = 20000;
  const double dx = (hi - lo) / steps;
  double integral = 0.0;
  for (int s = 0; s <= steps; ++s) {
    const double w = (s == 0 || s == steps) ? 0.5 : 1.0;
    integral += w * estimate_jacobian_kde(table, ones, lo + s * dx, KdeMode::kTreated, plain).matrix(0, 0);
  }
  EXPECT_NEAR(integral * dx, 1.0, 1e-6);
}

TEST(Bandwidth, SilvermanRuleWithUnitSpread) {
  // Four blocks of eight at -c, -b, b, c with sd = 1 and interpolated IQR = 1.34.
  const double b = (16.08 - std::sqrt(16.08 * 16.08 - 40.0 * (7.1824 - 31.0 / 16.0))) / 20.0;
  const double c = 2.68 - 3.0 * b;
  std::vector<double> v;
  for (double x : {-c, -b, b, c}) v.insert(v.end(), 8, x);
  EXPECT_NEAR(rule_of_thumb_bandwidth(v), 0.45, 1e-9);
  EXPECT_NEAR(0.9 * std::pow(32.0, -0.2), 0.45, 1e-15);
}

TEST(Bandwidth, Errors) {
  EXPECT_EQ(code_of([] { rule_of_thumb_bandwidth({}); }), ErrorCode::kNoContributingRows);
  const std::vector<double> flat(5, 2.0);
  EXPECT_EQ(code_of([&] { rule_of_thumb_bandwidth(flat); }), ErrorCode::kNonPositiveBandwidth);
  const auto untreated = ObservationTable(Matrix::Zero(2, 1), {0, 0}, {1.0, 2.0});
  const std::vector<double> pi{0.5, 0.5};
  EXPECT_EQ(code_of([&] { estimate_jacobian_kde(untreated, pi, 0.0, KdeMode::kTreated); }),
            ErrorCode::kNoContributingRows);
}

TEST(AnalyticJacobian, Expectile) {
  const auto table = treated_table({1.0, 2.0, 3.0, 4.0, 5.0});
  const std::vector<double> ones(5, 1.0);
  const std::vector<double> theta{2.5};
  EXPECT_DOUBLE_EQ(estimate_jacobian_analytic(*expectile_moment(0.5), table, ones, theta).matrix(0, 0), -0.5);
  // F = 2/5 = 0.4.
  EXPECT_NEAR(estimate_jacobian_analytic(*expectile_moment(0.25), table, ones, theta).matrix(0, 0), -0.45,
              1e-15);
}

TEST(AnalyticJacobian, QuantileCvarBlock) {
  const auto table = treated_table({0.0});
  KdeOptions opts;
  opts.bandwidth = kInvSqrt2Pi / 2.0;  // single point: density 1/h * phi(0) = 2
  const std::vector<double> ones{1.0};
  const std::vector<double> theta{0.0, 1.0};
  const auto j = estimate_jacobian_analytic(*quantile_cvar_moment(0.5), table, ones, theta, opts);
  EXPECT_NEAR(j.matrix(0, 0), 2.0, 1e-12);
  EXPECT_EQ(j.matrix(0, 1), 0.0);
  EXPECT_EQ(j.matrix(1, 0), 0.0);
  EXPECT_EQ(j.matrix(1, 1), -1.0);
  EXPECT_EQ(j.method, JacobianMethod::kQcvarBlock);
}

TEST(Variance, Examples) {
  JacobianEstimate two{Matrix::Constant(1, 1, 2.0), JacobianMethod::kKdeQuantile, std::nullopt};
  EXPECT_DOUBLE_EQ(estimate_variance(rows({{1.0}, {-1.0}}), two).sigma(0, 0), 0.25);

  JacobianEstimate eye{Matrix::Identity(2, 2), JacobianMethod::kQcvarBlock, std::nullopt};
  const auto v = estimate_variance(rows({{1.0, 0.0}, {0.0, 1.0}}), eye);
  EXPECT_TRUE(v.sigma.isApprox(0.5 * Matrix::Identity(2, 2)));
  EXPECT_EQ(v.n, 2u);

  JacobianEstimate singular{rows({{1.0, 2.0}, {2.0, 4.0}}), JacobianMethod::kQcvarBlock, std::nullopt};
  EXPECT_EQ(code_of([&] { estimate_variance(rows({{1.0, 0.0}}), singular); }),
            ErrorCode::kSingularJacobian);
}

TEST(Variance, SymmetricPsdForRandomInputs) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.uniform_index(3));
    Matrix psi(30, d), j(d, d);
    for (Eigen::Index r = 0; r < psi.size(); ++r) psi.data()[r] = rng.normal();
    for (Eigen::Index r = 0; r < j.size(); ++r) j.data()[r] = rng.normal();
    j += 3.0 * Matrix::Identity(d, d);
    const auto v = estimate_variance(psi, {j, JacobianMethod::kQcvarBlock, std::nullopt});
    EXPECT_TRUE(v.sigma.isApprox(v.sigma.transpose(), 1e-14));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v.sigma);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Variance, RepairFloorsNegativeEigenvalues) {
  Matrix m = rows({{1.0, 2.0}, {2.0, 1.0}});  // eigenvalues 3 and -1
  EXPECT_TRUE(repair_psd(m));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
  Matrix ok = Matrix::Identity(2, 2);
  EXPECT_FALSE(repair_psd(ok));
}

TEST(ConfidenceInterval, Examples) {
  VarianceEstimate v;
  v.sigma = Matrix::Constant(1, 1, 1.0);
  v.n = 100;
  const std::vector<double> theta{0.0}, one{1.0};
  const auto ci = confidence_interval(theta, v, one, 0.05);
  EXPECT_NEAR(ci.lower, -0.195996, 1e-6);
  EXPECT_NEAR(ci.upper, 0.195996, 1e-6);

  v.sigma(0, 0) = 0.0;
  const auto flat = confidence_interval(std::vector<double>{1.5}, v, one, 0.05);
  EXPECT_EQ(flat.lower, 1.5);
  EXPECT_EQ(flat.upper, 1.5);

  VarianceEstimate d2;
  d2.sigma = rows({{0.3, 0.0}, {0.0, 0.7}});
  d2.n = 50;
  const std::vector<double> contrast{1.0, -1.0}, th{2.0, 1.0};
  const auto diff = confidence_interval(th, d2, contrast, 0.05);
  EXPECT_DOUBLE_EQ(diff.estimate, 1.0);
  EXPECT_NEAR(diff.upper - diff.estimate, normal_quantile(0.975) * std::sqrt(1.0 / 50.0), 1e-14);
}

namespace {

SplitResult fake_split(const FoldPlan& plan, std::vector<double> theta, Matrix influence) {
  SplitResult s;
  s.ok = true;
  s.plan = plan;
  s.theta = std::move(theta);
  s.influence = std::move(influence);
  s.sigma = Matrix::Zero(s.influence.cols(), s.influence.cols());
  s.jacobian = {Matrix::Identity(s.influence.cols(), s.influence.cols()), JacobianMethod::kKdeQuantile,
                std::nullopt};
  s.propensity.assign(static_cast<std::size_t>(s.influence.rows()), 0.5);
  return s;
}

EstimateReport fake_report(std::vector<SplitResult> splits) {
  EstimateReport r;
  r.estimand = "quantile";
  r.n = static_cast<std::size_t>(splits.front().influence.rows());
  r.theta = splits.front().theta;
  r.splits = std::move(splits);
  return r;
}

}  // namespace

TEST(EffectDifference, Examples) {
  const FoldPlan plan = make_fold_plan(20, 3, 1, 0);
  Matrix infl(2, 1);
  infl << 1.0, -1.0;
  // Only plan identity is compared; the plan's row count is not.
  const auto same = fake_report({fake_split(plan, {0.4}, infl)});
  const auto zero = effect_difference(same, same, true);
  EXPECT_EQ(zero.theta[0], 0.0);
  EXPECT_EQ(zero.sigma(0, 0), 0.0);

  const auto other = fake_report({fake_split(plan, {0.1}, Matrix::Zero(2, 1))});
  const auto tau = effect_difference(same, other, false);
  EXPECT_DOUBLE_EQ(tau.theta[0], 0.3);
  EXPECT_DOUBLE_EQ(tau.sigma(0, 0), 1.0);

  const auto moved = fake_report({fake_split(make_fold_plan(20, 3, 1, 99), {0.1}, Matrix::Zero(2, 1))});
  EXPECT_EQ(code_of([&] { effect_difference(same, moved, false); }), ErrorCode::kFoldPlanMismatch);
}

TEST(Nu, ContributionExamples) {
  EXPECT_DOUBLE_EQ(nu_contribution(1, 1, 0.5, 1.0, 1.0, 0.0), 1.0);
  // Perfect fit: residual vanishes whatever the instrument weight.
  EXPECT_DOUBLE_EQ(nu_contribution(0, 0, 0.3, 0.0, 0.8, 0.0), 0.8);
  EXPECT_DOUBLE_EQ(nu_contribution(1, 1, 0.3, 1.0, 1.0, 0.2), 0.8);
}

TEST(Nu, IndependentTreatmentIsTooSmall) {
  // Balanced (W, T) quadruples with constant-in-W oracles: every fold sums to 0.
  const std::size_t n = 40;
  std::vector<int> w(n), t(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = static_cast<int>(i % 2);
    t[i] = static_cast<int>((i / 2) % 2);
  }
  const ObservationTable table(Matrix::Zero(static_cast<Eigen::Index>(n), 1), t,
                               std::vector<double>(n, 0.0), w);
  const auto half = LearnerConfig::oracle([](std::span<const double>) { return 0.5; });
  const FoldPlan plan = make_fold_plan(n, 4, 2, 3);
  EXPECT_EQ(code_of([&] { estimate_nu_dml(table, plan, half, half, {}, 0); }), ErrorCode::kNuTooSmall);
}

TEST(Nu, FullComplianceIsOne) {
  const std::size_t n = 40;
  std::vector<int> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = static_cast<int>(i % 2);
  const ObservationTable table(Matrix::Zero(static_cast<Eigen::Index>(n), 1), w,
                               std::vector<double>(n, 0.0), w);
  const auto half = LearnerConfig::oracle([](std::span<const double>) { return 0.5; });
  // P(T=1 | X, W) = W exactly; the feature row is [X, W].
  const auto perfect = LearnerConfig::oracle([](std::span<const double> xw) { return xw.back(); });
  const FoldPlan plan = make_fold_plan(n, 4, 2, 3);
  EXPECT_DOUBLE_EQ(estimate_nu_dml(table, plan, half, perfect, {}, 0), 1.0);
}
