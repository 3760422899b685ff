#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldml/data.hpp"
#include "ldml/engine.hpp"

namespace ldml {

/// How the second argument of N(mean, 2 X3) is read.
enum class NoiseConvention { kVariance, kSd };

std::string_view noise_convention_name(NoiseConvention c);
NoiseConvention parse_noise_convention(std::string_view name);

inline constexpr std::size_t kDgpDimension = 20;

struct DgpConfig {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  NoiseConvention noise = NoiseConvention::kVariance;
};

/// X ~ U[0,1]^20, T ~ Bernoulli(Phi(3(1 - X1 - X3))),
/// Y(1) = 1[X1 + X2 <= 1] + s(X3) Z with s = sqrt(2 X3) (variance) or 2 X3 (sd).
/// Y is drawn for every row; estimands only use it where T = 1.
ObservationTable generate_dgp(const DgpConfig& config);

/// Instrumented variant with full compliance: W ~ Bernoulli(1/2), T = W,
/// Y(1) as above, Y(0) ~ N(X2, 1), Y = T Y(1) + (1 - T) Y(0).
ObservationTable generate_iv_dgp(const DgpConfig& config);

double dgp_propensity(std::span<const double> x);
/// P(Y(1) <= y | X = x).
double dgp_outcome_cdf(double y, std::span<const double> x,
                       NoiseConvention noise = NoiseConvention::kVariance);

struct OracleQuantile {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Empirical gamma-quantile of `draws` simulated Y(1) values, with the
/// delta-method standard error sqrt(g(1-g)/draws)/f using a kernel density
/// estimate of f at the quantile. Errors: InvalidArgument (draws < 10^6).
OracleQuantile true_quantile_oracle(double gamma, std::size_t draws, std::uint64_t seed,
                                    NoiseConvention noise = NoiseConvention::kVariance);

/// The gamma = 2/3 quantile of Y(1), frozen from a 10^7-draw run of
/// true_quantile_oracle (seed 20240611).
OracleQuantile reference_oracle(NoiseConvention noise = NoiseConvention::kVariance);
inline constexpr double kReferenceGamma = 2.0 / 3.0;

struct MethodEstimate {
  double theta = 0.0;
  double standard_error = 0.0;
};

/// K-fold cross-fitted IPW quantile: out-of-fold propensities, pooled step
/// equation, kernel Jacobian. Errors: InvalidArgument (K < 3), DegenerateTreatmentArm.
MethodEstimate baseline_ipw(const ObservationTable& table, double gamma, std::size_t folds,
                            const LearnerSet& learners, ClipRange clip, std::uint64_t seed,
                            bool normalize_weights = false);

/// Quantile grid of the treated outcomes at levels j/100, j = 1..99, duplicates removed.
std::vector<double> dml_d_grid(const ObservationTable& table);

/// Discretized DML: per fold, one conditional-CDF regression per grid point
/// fit out of fold; the estimate is the grid point minimizing |psi_bar|
/// (smallest on ties). Errors: InvalidArgument (K < 3), EmptySubsample.
MethodEstimate baseline_dml_d(const ObservationTable& table, double gamma, std::size_t folds,
                              const LearnerSet& learners, ClipRange clip, std::uint64_t seed,
                              bool normalize_weights = false);

/// Learners shared by every method of the simulation study: a small, strongly
/// shrunk gbt (100 trees, depth 3, rate 0.05, min_leaf 20) in every slot.
/// Nuisances there are fit on a few hundred treated rows, where the library
/// default (200 trees, rate 0.1, min_leaf 5) overfits the extreme propensities.
LearnerSet study_learners();

enum class StudyMethod { kLdml, kIpw, kDmlD };
std::string_view study_method_name(StudyMethod m);
/// Errors: UnknownMethod.
StudyMethod parse_study_method(std::string_view name);

struct StudyConfig {
  std::vector<StudyMethod> methods{StudyMethod::kLdml, StudyMethod::kIpw, StudyMethod::kDmlD};
  std::vector<std::size_t> n_grid{1600, 6400};
  std::size_t reps = 75;
  double gamma = kReferenceGamma;
  std::uint64_t seed = 0;
  std::size_t runs_per_rep = 3;
  std::size_t folds = 5;
  std::size_t kprime = 2;
  double alpha = 0.05;
  LearnerSet learners = study_learners();
  ClipRange clip;
  /// Hajek-normalizes the propensity weights of every method per fold.
  bool normalize_weights = true;
  NoiseConvention noise = NoiseConvention::kVariance;
  std::size_t threads = 1;
  /// Target value; defaults to the frozen oracle when gamma is 2/3.
  std::optional<double> truth;
};

struct ReplicationReport {
  std::string method;
  std::size_t n = 0;
  std::size_t reps = 0;
  double truth = 0.0;
  std::vector<double> estimates;
  std::vector<double> standard_errors;
  std::vector<double> lower;
  std::vector<double> upper;
  double mse = 0.0;
  double mse_se = 0.0;
  double coverage = 0.0;
  double coverage_se = 0.0;
};

/// Runs every method on `reps` datasets per n. Each dataset is shared across
/// methods; each method runs `runs_per_rep` times with fresh fold seeds and
/// reports the median estimate with SE = median(run SEs) + sd(run estimates)/sqrt(runs).
/// Errors: ZeroReps, UnknownMethod, InvalidArgument (no truth for this gamma).
std::vector<ReplicationReport> run_study(const StudyConfig& config);

/// One method on one dataset (the median-of-runs rule included).
MethodEstimate run_study_method(const ObservationTable& table, StudyMethod method,
                                const StudyConfig& config, std::uint64_t seed);

}  // namespace ldml
