#include <cmath>

#include <gtest/gtest.h>

#include "ldml/error.hpp"
#include "ldml/gbt.hpp"
#include "ldml/learners.hpp"
#include "ldml/random.hpp"

using namespace ldml;

namespace {

Matrix column(std::initializer_list<double> values) {
  Matrix m(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double v : values) m(i++, 0) = v;
  return m;
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

struct Synthetic {
  Matrix x;
  std::vector<double> y;
};

Synthetic synthetic(std::size_t m, std::uint64_t seed, bool binary) {
  Rng rng(seed);
  Synthetic s{Matrix(static_cast<Eigen::Index>(m), 3), std::vector<double>(m)};
  for (std::size_t i = 0; i < m; ++i) {
    for (int f = 0; f < 3; ++f) s.x(static_cast<Eigen::Index>(i), f) = rng.uniform();
    const double signal = s.x(static_cast<Eigen::Index>(i), 0) - s.x(static_cast<Eigen::Index>(i), 1);
    s.y[i] = binary ? (rng.uniform() < 0.5 + 0.4 * signal ? 1.0 : 0.0) : signal + 0.3 * rng.normal();
  }
  return s;
}

}  // namespace

TEST(Learners, LogisticInterceptOnlyReturnsBaseRate) {
  const Matrix x(4, 0);
  const auto model = fit(LearnerConfig::logistic(), x, std::vector<double>{1, 0, 0, 1}, 0);
  const std::vector<double> none;
  EXPECT_NEAR(model.predict_row(none), 0.5, 1e-12);
}

TEST(Learners, RidgeWithoutPenaltyInterpolatesLinearData) {
  const auto model = fit(LearnerConfig::ridge(0.0), column({1, 2, 4}), std::vector<double>{2, 4, 8}, 0);
  const std::vector<double> three{3.0};
  EXPECT_NEAR(model.predict_row(three), 6.0, 1e-10);
}

TEST(Learners, RidgeRankDeficientWithoutPenaltyIsSingular) {
  Matrix x(3, 2);
  x << 1, 2, 2, 4, 3, 6;
  EXPECT_EQ(code_of([&] { fit(LearnerConfig::ridge(0.0), x, std::vector<double>{1, 2, 3}, 0); }),
            ErrorCode::kSingularDesign);
}

TEST(Learners, GbtWithoutTreesPredictsTargetMean) {
  const auto data = synthetic(50, 1, false);
  const auto model = fit(LearnerConfig::gbt(0), data.x, data.y, 0);
  double mean = 0;
  for (double v : data.y) mean += v / 50.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    EXPECT_NEAR(model.predict_row({data.x.data() + i * 3, 3}), mean, 1e-12);
  }
}

TEST(Learners, ConstantAndOracle) {
  const auto c = fit(LearnerConfig::constant(), column({7, 8, 9}), std::vector<double>{1, 2, 3}, 0);
  const std::vector<double> any{123.0};
  EXPECT_DOUBLE_EQ(c.predict_row(any), 2.0);

  const auto o = fit(LearnerConfig::oracle([](std::span<const double> x) { return x[0]; }),
                     column({0}), std::vector<double>{0}, 0);
  const std::vector<double> row{0.37};
  EXPECT_DOUBLE_EQ(o.predict_row(row), 0.37);
}

TEST(Learners, ClippingAppliesAtPrediction) {
  const auto o = fit(LearnerConfig::oracle([](std::span<const double>) { return 0.001; }),
                     column({0}), std::vector<double>{0}, 0)
                     .with_clip(ClipRange{0.01, 0.99});
  const std::vector<double> row{0.0};
  EXPECT_DOUBLE_EQ(o.predict_row(row), 0.01);
  EXPECT_DOUBLE_EQ(o.with_clip(std::nullopt).predict_row(row), 0.001);
}

TEST(Learners, Errors) {
  const Matrix empty(0, 1);
  EXPECT_EQ(code_of([&] { fit(LearnerConfig::gbt(), empty, std::vector<double>{}, 0); }),
            ErrorCode::kEmptyTrainingSet);
  EXPECT_EQ(code_of([&] { fit(LearnerConfig::logistic(), column({1, 2}), std::vector<double>{0, 2}, 0); }),
            ErrorCode::kNonBinaryLabels);
  const auto model = fit(LearnerConfig::constant(), column({1, 2}), std::vector<double>{0, 1}, 0);
  EXPECT_EQ(code_of([&] { predict(model, Matrix(2, 3)); }), ErrorCode::kDimensionMismatch);
  EXPECT_EQ(code_of([] { LearnerConfig::gbt(10, 3, 1.5).validate(); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([] { LearnerConfig::oracle(nullptr).validate(); }), ErrorCode::kConfigError);
  EXPECT_EQ(code_of([] { parse_learner_kind("oracle"); }), ErrorCode::kConfigError);
}

TEST(Learners, LogisticOnSeparableDataStaysInsideUnitInterval) {
  const Matrix x = column({-2, -1, -0.5, 0.5, 1, 2});
  const auto model = fit(LearnerConfig::logistic(), x, std::vector<double>{0, 0, 0, 1, 1, 1}, 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double p = model.predict_row({x.data() + i, 1});
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
  const auto coef = model.coefficients();
  ASSERT_EQ(coef.size(), 2u);
  EXPECT_TRUE(std::isfinite(coef[1]));
}

TEST(Learners, LogisticMatchesKnownSolution) {
  // Two groups with base rates 1/4 and 3/4: the unpenalized MLE has slope log 9.
  const Matrix x = column({0, 0, 0, 0, 1, 1, 1, 1});
  auto config = LearnerConfig::logistic(0.0);
  const auto model = fit(config, x, std::vector<double>{1, 0, 0, 0, 1, 1, 1, 0}, 0);
  const auto coef = model.coefficients();
  EXPECT_NEAR(coef[0], std::log(1.0 / 3.0), 1e-8);
  EXPECT_NEAR(coef[1], std::log(9.0), 1e-8);
}

TEST(Gbt, TrainingLossNonincreasingInTrees) {
  for (const bool binary : {false, true}) {
    const auto data = synthetic(400, binary ? 3 : 4, binary);
    const FeatureBins bins(data.x, 32);
    GbtParams p;
    p.trees = 60;
    const GbtModel model = fit_gbt(bins, data.y, p, 7);
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t <= p.trees; ++t) {
      double loss = 0;
      for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
        const double r = data.y[static_cast<std::size_t>(i)] - model.predict_row({data.x.data() + i * 3, 3}, t);
        loss += r * r;
      }
      ASSERT_LE(loss, previous + 1e-9) << "tree " << t;
      previous = loss;
    }
  }
}

TEST(Gbt, SubsampledFitIsReproducible) {
  const auto data = synthetic(300, 8, false);
  auto config = LearnerConfig::gbt(40, 3, 0.1, 5);
  config.subsample = 0.6;
  const auto a = predict(fit(config, data.x, data.y, 11), data.x);
  const auto b = predict(fit(config, data.x, data.y, 11), data.x);
  const auto c = predict(fit(config, data.x, data.y, 12), data.x);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Learners, FitIsBitReproducible) {
  const auto data = synthetic(200, 9, true);
  for (const auto& config : {LearnerConfig::gbt(), LearnerConfig::logistic(), LearnerConfig::ridge()}) {
    const auto a = predict(fit(config, data.x, data.y, 3), data.x);
    const auto b = predict(fit(config, data.x, data.y, 3), data.x);
    EXPECT_EQ(a, b) << learner_kind_name(config.kind);
  }
}

TEST(Learners, FitManyMatchesIndividualFits) {
  const auto data = synthetic(150, 10, false);
  std::vector<std::vector<double>> targets{data.y, data.y};
  for (double& v : targets[1]) v = v > 0 ? 1.0 : 0.0;
  const auto config = LearnerConfig::gbt(30);
  const auto many = fit_many(config, data.x, targets, 5);
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_EQ(predict(many[t], data.x), predict(fit(config, data.x, targets[t], 5), data.x));
  }
}

TEST(Gbt, BinsRespectCutConvention) {
  const Matrix x = column({1, 2, 2, 3, 4});
  const FeatureBins bins(x, 32);
  ASSERT_EQ(bins.bin_count(0), 4u);
  EXPECT_EQ(bins.code(0, 0), 0);
  EXPECT_EQ(bins.code(1, 0), 1);
  EXPECT_EQ(bins.code(2, 0), 1);
  EXPECT_EQ(bins.code(4, 0), 3);
}
