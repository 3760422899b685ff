#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ldml/data.hpp"
#include "ldml/estimands.hpp"
#include "ldml/fold_plan.hpp"
#include "ldml/learners.hpp"

namespace ldml {

struct JacobianEstimate {
  Matrix matrix;
  JacobianMethod method = JacobianMethod::kKdeQuantile;
  std::optional<double> bandwidth;
};

struct VarianceEstimate {
  Matrix sigma;
  std::size_t n = 0;
  JacobianEstimate jacobian;
  /// Rows J^{-1} psi_i, one per observation.
  Matrix influence;
  /// True when tiny negative eigenvalues were floored to make sigma PSD.
  bool repaired = false;
};

struct ConfidenceInterval {
  std::vector<double> contrast;
  double alpha = 0.05;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

enum class KdeMode { kTreated, kLqteSigned };

struct KdeOptions {
  bool self_normalize = true;
  std::optional<double> bandwidth;  // overrides the rule when set
};

/// h = 0.9 min(sd, IQR/1.34) m^(-1/5) on the contributing outcomes.
/// Errors: NoContributingRows, NonPositiveBandwidth.
double rule_of_thumb_bandwidth(std::span<const double> values);

/// Kernel estimate of the density that forms the quantile Jacobian.
/// kTreated weights treated rows by 1/propensity; kLqteSigned weights rows
/// with T=1 by (W - p)/(p(1-p)) and divides by nu, where `propensity` then holds
/// P(W=1|X). Errors: NoContributingRows, NonPositiveBandwidth.
JacobianEstimate estimate_jacobian_kde(const ObservationTable& table,
                                       std::span<const double> propensity, double theta1,
                                       KdeMode mode, const KdeOptions& options = {},
                                       double nu = 1.0);

/// Closed-form Jacobians: quantile_cvar -> diag(kde, -1); expectile ->
/// -g - (1-2g) F(theta1) with F the self-normalized IPW CDF of treated rows.
JacobianEstimate estimate_jacobian_analytic(const MomentModel& moment,
                                            const ObservationTable& table,
                                            std::span<const double> propensity,
                                            std::span<const double> theta,
                                            const KdeOptions& options = {});

/// Dispatches on the moment's Jacobian recipe.
JacobianEstimate estimate_jacobian(const MomentModel& moment, const ObservationTable& table,
                                   std::span<const double> propensity,
                                   std::span<const double> theta, const KdeOptions& options = {},
                                   double nu = 1.0);

/// Sigma = (1/N) sum_i J^{-1} psi_i psi_i^T J^{-T}, psi_rows is N x d.
/// Errors: SingularJacobian (smallest singular value <= 1e-10), DimensionMismatch.
VarianceEstimate estimate_variance(const Matrix& psi_rows, const JacobianEstimate& jacobian);

/// Sigma = (1/N) sum_i w_i w_i^T for precomputed influence rows.
VarianceEstimate variance_from_influence(const Matrix& influence);

/// Symmetrizes and floors negative eigenvalues at zero. Returns true if any
/// eigenvalue had to be floored.
bool repair_psd(Matrix& sigma);

/// [z'theta -+ Phi^{-1}(1-alpha/2) sqrt(z' Sigma z / N)].
ConfidenceInterval confidence_interval(std::span<const double> theta,
                                       const VarianceEstimate& variance,
                                       std::span<const double> contrast, double alpha);

/// One term of the cross-fitted AIPW estimate of the effect of W on T:
/// (W - pw)/(pw(1-pw)) (T - pt) + pt1 - pt0.
double nu_contribution(int instrument, int treatment, double instrument_propensity,
                       double treatment_fitted, double treatment_if_on, double treatment_if_off);

/// Cross-fitted nu = E[P(T=1|X,W=1) - P(T=1|X,W=0)]. P(W=1|X) uses
/// `instrument_learner`; P(T=1|X,W) is fit on [X, W] with `treatment_learner`.
/// Errors: MissingInstrument, NuTooSmall (nu < 0.01), DegenerateTreatmentArm.
double estimate_nu_dml(const ObservationTable& table, const FoldPlan& plan,
                       const LearnerConfig& instrument_learner,
                       const LearnerConfig& treatment_learner, ClipRange clip,
                       std::uint64_t seed);

inline constexpr double kMinNu = 0.01;

enum class AggregateRule { kMedian, kMean };

struct AggregateResult {
  std::vector<double> theta;
  Matrix sigma;
  bool repaired = false;
};

/// Combines per-split estimates. Mean: theta = average, Sigma = (1/S) sum_s
/// [Sigma_s + (scale/S) d_s d_s^T] with d_s = theta_s - theta. Median: the
/// componentwise median for theta and elementwise median of the same
/// bracketed terms for Sigma. `spread_scale` puts the split spread on Sigma's
/// scale: Sigma describes sqrt(N)(theta - theta*), so callers pass N.
AggregateResult aggregate_splits(const std::vector<std::vector<double>>& thetas,
                                 const std::vector<Matrix>& sigmas, AggregateRule rule,
                                 double spread_scale = 1.0);

}  // namespace ldml
