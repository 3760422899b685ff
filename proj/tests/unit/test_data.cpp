#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "ldml/data.hpp"
#include "ldml/error.hpp"
#include "ldml/fold_plan.hpp"
#include "ldml/random.hpp"

namespace fs = std::filesystem;
using namespace ldml;

namespace {

class CsvTest : public ::testing::Test {
 protected:
  fs::path write(const std::string& name, const std::string& body) {
    const fs::path p = fs::temp_directory_path() / ("ldml_data_" + name + ".csv");
    std::ofstream(p) << body;
    paths_.push_back(p);
    return p;
  }
  void TearDown() override {
    for (const auto& p : paths_) fs::remove(p);
  }
  std::vector<fs::path> paths_;
};

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

TEST_F(CsvTest, ThreeRowFile) {
  const auto p = write("three", "x1,T,Y\n0.5,1,2.0\n1.5,0,3.0\n-2,1,4.5\n");
  const auto t = load_csv(p, {"T", "Y", std::nullopt, {}});
  EXPECT_EQ(t.n(), 3u);
  EXPECT_EQ(t.p(), 1u);
  EXPECT_EQ(t.treatment(1), 0);
  EXPECT_DOUBLE_EQ(t.outcome(2), 4.5);
  EXPECT_DOUBLE_EQ(t.row(2)[0], -2.0);
  EXPECT_EQ(t.covariate_names(), std::vector<std::string>{"x1"});
}

TEST_F(CsvTest, TreatmentTwoIsRejected) {
  const auto p = write("t2", "x1,T,Y\n0.5,2,2.0\n");
  EXPECT_EQ(code_of([&] { load_csv(p, {"T", "Y", std::nullopt, {}}); }),
            ErrorCode::kNonBinaryTreatment);
}

TEST_F(CsvTest, MissingOutcomeColumn) {
  const auto p = write("noy", "x1,T\n0.5,1\n");
  EXPECT_EQ(code_of([&] { load_csv(p, {"T", "Y", std::nullopt, {}}); }), ErrorCode::kMissingColumn);
}

TEST_F(CsvTest, EmptyFileAndBadNumbers) {
  const auto empty = write("empty", "");
  EXPECT_EQ(code_of([&] { load_csv(empty, {"T", "Y", std::nullopt, {}}); }), ErrorCode::kEmptyFile);
  const auto inf = write("inf", "x1,T,Y\ninf,1,2\n");
  EXPECT_EQ(code_of([&] { load_csv(inf, {"T", "Y", std::nullopt, {}}); }),
            ErrorCode::kNonFiniteValue);
  const auto junk = write("junk", "x1,T,Y\n1.0abc,1,2\n");
  EXPECT_EQ(code_of([&] { load_csv(junk, {"T", "Y", std::nullopt, {}}); }),
            ErrorCode::kMalformedValue);
}

TEST_F(CsvTest, InstrumentAndExplicitCovariates) {
  const auto p = write("iv", "a,b,W,T,Y\n1,2,1,1,0.1\n3,4,0,1,0.2\n");
  const auto t = load_csv(p, {"T", "Y", std::string("W"), {"b"}});
  ASSERT_TRUE(t.has_instrument());
  EXPECT_EQ(t.instrument(1), 0);
  EXPECT_EQ(t.p(), 1u);
  EXPECT_DOUBLE_EQ(t.row(1)[0], 4.0);
}

TEST_F(CsvTest, WriteThenReadRoundTrips) {
  Matrix x(2, 2);
  x << 0.1, 1e-300, -3.25, 1.0 / 3.0;
  const ObservationTable t(x, {1, 0}, {2.5, -0.75});
  const fs::path p = fs::temp_directory_path() / "ldml_data_roundtrip.csv";
  paths_.push_back(p);
  write_csv(p, t, {"T", "Y", std::nullopt, {"u", "v"}});
  const auto back = load_csv(p, {"T", "Y", std::nullopt, {}});
  EXPECT_EQ(back.covariates(), t.covariates());
  EXPECT_EQ(back.outcomes(), t.outcomes());
  EXPECT_EQ(back.treatments(), t.treatments());
}

TEST(ObservationTable, RejectsInvalidValues) {
  Matrix x(2, 1);
  x << 0.0, 1.0;
  EXPECT_EQ(code_of([&] { ObservationTable(x, {0, 3}, {1.0, 2.0}); }),
            ErrorCode::kNonBinaryTreatment);
  EXPECT_EQ(code_of([&] { ObservationTable(x, {0, 1}, {1.0, std::nan("")}); }),
            ErrorCode::kNonFiniteValue);
}

TEST(FoldPlan, TenRowsFiveFolds) {
  const auto plan = make_fold_plan(10, 5, 2, 1);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(plan.fold_rows(k).size(), 2u);
  // Folds are 0-based: fold 0 here is the first fold.
  using V = std::vector<std::size_t>;
  EXPECT_EQ(plan.h1(0), (V{1, 2}));
  EXPECT_EQ(plan.h2(0), (V{3, 4}));
  EXPECT_EQ(plan.h1(2), (V{0, 1}));
  EXPECT_EQ(plan.h2(2), (V{3, 4}));
  EXPECT_EQ(plan.h1(3), (V{0, 1}));
  EXPECT_EQ(plan.h2(3), (V{2, 4}));
}

TEST(FoldPlan, ThreeFoldsOneInitialFold) {
  const auto plan = make_fold_plan(9, 3, 1, 4);
  EXPECT_EQ(plan.h1(1), std::vector<std::size_t>{0});
  EXPECT_EQ(plan.h2(1), std::vector<std::size_t>{2});
}

TEST(FoldPlan, Guards) {
  EXPECT_EQ(code_of([] { make_fold_plan(10, 5, 4, 0); }), ErrorCode::kInvalidKPrime);
  EXPECT_EQ(code_of([] { make_fold_plan(10, 5, 0, 0); }), ErrorCode::kInvalidKPrime);
  EXPECT_EQ(code_of([] { make_fold_plan(4, 5, 2, 0); }), ErrorCode::kTooFewRows);
}

TEST(FoldPlan, PartitionAndCeilSizesForManyShapes) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t folds = 3 + rng.uniform_index(8);
    const std::size_t kprime = 1 + rng.uniform_index(folds - 2);
    const std::size_t n = folds + rng.uniform_index(300);
    const auto plan = make_fold_plan(n, folds, kprime, rng.next_u64());
    std::vector<int> seen(n, 0);
    for (std::size_t k = 0; k < folds; ++k) {
      const std::size_t lo = (k * n + folds - 1) / folds;
      const std::size_t hi = ((k + 1) * n + folds - 1) / folds;
      ASSERT_EQ(plan.fold_rows(k).size(), hi - lo);
      for (std::size_t r : plan.fold_rows(k)) {
        ++seen[r];
        ASSERT_EQ(plan.fold_of(r), k);
      }
      ASSERT_EQ(plan.h1(k).size(), kprime);
      std::set<std::size_t> all(plan.h1(k).begin(), plan.h1(k).end());
      for (std::size_t f : plan.h2(k)) ASSERT_TRUE(all.insert(f).second);
      ASSERT_FALSE(all.contains(k));
      all.insert(k);
      ASSERT_EQ(all.size(), folds);

      // No row used for the initial estimate is also used for the localized fit.
      const auto r1 = plan.rows_in(plan.h1(k));
      const auto r2 = plan.rows_in(plan.h2(k));
      std::set<std::size_t> s1(r1.begin(), r1.end());
      for (std::size_t r : r2) ASSERT_FALSE(s1.contains(r));
    }
    for (int c : seen) ASSERT_EQ(c, 1);
  }
}

TEST(FoldPlan, SameSeedSamePlan) {
  EXPECT_TRUE(make_fold_plan(101, 5, 2, 77) == make_fold_plan(101, 5, 2, 77));
  EXPECT_FALSE(make_fold_plan(101, 5, 2, 77) == make_fold_plan(101, 5, 2, 78));
}

TEST(FoldPlan, StratifiedFoldsBalanceTreatedShare) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng.uniform_index(500);
    std::vector<int> t(n);
    const double share = rng.uniform();
    for (int& v : t) v = rng.bernoulli(share) ? 1 : 0;
    const double global = static_cast<double>(std::count(t.begin(), t.end(), 1)) / static_cast<double>(n);
    const auto plan = make_fold_plan(n, 5, 2, rng.next_u64(), std::span<const int>(t));
    for (std::size_t k = 0; k < 5; ++k) {
      double treated = 0;
      for (std::size_t r : plan.fold_rows(k)) treated += t[r];
      const double expected = global * static_cast<double>(plan.fold_rows(k).size());
      ASSERT_LE(std::abs(treated - expected), 1.0) << "fold " << k << " n " << n;
    }
  }
}
