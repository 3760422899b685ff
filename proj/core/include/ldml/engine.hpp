#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldml/data.hpp"
#include "ldml/error.hpp"
#include "ldml/estimands.hpp"
#include "ldml/fold_plan.hpp"
#include "ldml/inference.hpp"
#include "ldml/learners.hpp"
#include "ldml/solvers.hpp"

namespace ldml {

enum class Variant { kLdml1, kLdml2 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
std::string_view aggregate_rule_name(AggregateRule rule);
AggregateRule parse_aggregate_rule(std::string_view name);

/// Learner recipe per nuisance slot.
struct LearnerSet {
  LearnerConfig propensity = LearnerConfig::gbt();
  LearnerConfig binary_outcome = LearnerConfig::gbt();
  LearnerConfig continuous_outcome = LearnerConfig::gbt();
  LearnerConfig instrument_propensity = LearnerConfig::gbt();

  const LearnerConfig& for_slot(LearnerSlot slot) const;
};

struct LdmlConfig {
  std::size_t folds = 5;
  std::size_t kprime = 2;
  Variant variant = Variant::kLdml2;
  std::size_t splits = 3;
  AggregateRule aggregate = AggregateRule::kMedian;
  double epsilon_tolerance = 0.0;
  LearnerSet learners;
  ClipRange clip;
  bool normalize_weights = false;
  bool stratify = true;
  KdeOptions kde;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
  /// Skips the initial estimators and localizes every fold at this theta.
  std::optional<std::vector<double>> fixed_initial;
  /// Flags to stratify folds on instead of the table's treatment column (lets
  /// a control-arm run reuse the treated arm's fold plans).
  std::optional<std::vector<int>> stratify_on;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Fitted nuisances of one split, with the training rows of every fit kept so
/// the separation between initial estimate and localized fit can be audited.
struct CrossFitState {
  FoldPlan plan;
  std::vector<std::vector<double>> theta_init;              // [fold]
  std::vector<std::vector<FittedPredictor>> eta1_models;    // [fold][task]
  std::vector<std::vector<FittedPredictor>> eta2_models;    // [fold][task]
  std::vector<std::vector<std::size_t>> init_rows;          // [fold]
  std::vector<std::vector<std::vector<std::size_t>>> eta1_rows;  // [fold][task]
  std::vector<std::vector<std::vector<std::size_t>>> eta2_rows;  // [fold][task]
  std::optional<double> nu_hat;
};

/// Per-row nuisance values evaluated out of fold.
struct NuisanceValues {
  Matrix eta1;  // n x |eta1 tasks|
  Matrix eta2;  // n x |eta2 tasks|
  double nu = 1.0;

  NuisanceRow row(std::size_t i) const;
};

struct FoldDiagnostics {
  std::vector<double> theta_init;
  std::size_t init_training_rows = 0;
  std::vector<std::size_t> eta1_training_rows;
  std::vector<std::size_t> eta2_training_rows;
  std::optional<std::vector<double>> theta_fold;  // ldml1 only
};

struct SplitResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::optional<ErrorCode> error_code;  // set when the split was discarded
  std::string error;
  std::vector<double> theta;
  Matrix sigma;
  JacobianEstimate jacobian;
  Matrix influence;
  std::vector<double> propensity;  // out-of-fold weighting propensity per row
  double residual = 0.0;           // ||psi_bar(theta)||
  std::optional<double> nu_hat;
  bool sigma_repaired = false;
  std::vector<FoldDiagnostics> folds;
  std::optional<FoldPlan> plan;
};

struct EstimateReport {
  std::string estimand;
  double gamma = 0.0;
  std::size_t n = 0;
  AggregateRule aggregate = AggregateRule::kMedian;
  std::vector<double> theta;
  Matrix sigma;
  Matrix jacobian;  // elementwise median over kept splits
  std::vector<double> stderr_;
  std::vector<SplitResult> splits;
  std::vector<std::string> warnings;

  /// CI for one component (contrast e_j).
  ConfidenceInterval interval(std::size_t component, double alpha) const;
};

/// Cross-fitted estimate of the initial equation on the folds h1(k): each
/// fold l of h1(k) is weighted by nuisances fit on h1(k) \ {l}.
/// Errors: KPrimeTooSmall, DegenerateTreatmentArm, EmptySubsample,
/// SolverNoCandidate.
std::vector<double> fit_initial(const ObservationTable& table, const FoldPlan& plan,
                                std::size_t fold, const MomentModel& initial_moment,
                                const LearnerSet& learners, ClipRange clip, double nu,
                                std::uint64_t seed, bool normalize_weights = false,
                                std::vector<std::size_t>* training_rows = nullptr);

/// IPW initial estimate for ignorability moments.
std::vector<double> fit_initial_ipw(const ObservationTable& table, const FoldPlan& plan,
                                    std::size_t fold, const LearnerConfig& propensity,
                                    const MomentModel& ipw, ClipRange clip, std::uint64_t seed);

/// Weighting initial estimate for the local quantile (complier regressions set to 0).
/// Errors: additionally MissingInstrument, NuTooSmall.
std::vector<double> fit_initial_lqte_weighting(const ObservationTable& table,
                                               const FoldPlan& plan, std::size_t fold,
                                               const LearnerConfig& instrument_propensity,
                                               double gamma, double nu, ClipRange clip,
                                               std::uint64_t seed);

/// Fits eta1 on the h2 folds at theta_init[k] and eta2 on h1 and h2.
/// Errors: EmptySubsample, DegenerateTreatmentArm.
CrossFitState fit_localized_nuisances(const ObservationTable& table, const FoldPlan& plan,
                                      std::vector<std::vector<double>> theta_init,
                                      const MomentModel& moment, const LearnerSet& learners,
                                      ClipRange clip, std::uint64_t seed);

/// Rescales eta2(i, column) over `rows` so that (1/|rows|) sum T_i / eta2(i, column) = 1.
void normalize_propensity_weights(const ObservationTable& table,
                                  std::span<const std::size_t> rows, Matrix& eta2,
                                  Eigen::Index column);

/// Out-of-fold nuisance values for every row, optionally Hajek-normalizing
/// the weighting propensity within each fold.
NuisanceValues evaluate_nuisances(const ObservationTable& table, const CrossFitState& state,
                                  const MomentModel& moment, bool normalize_weights);

/// psi rows (N x d) at theta.
Matrix psi_rows(const ObservationTable& table, const MomentModel& moment,
                std::span<const double> theta, const NuisanceValues& nuisances,
                std::span<const std::size_t> rows = {});

/// Solves the empirical equation averaged over `rows` (all rows when empty)
/// per the moment's solver hint. Errors: SolverNoCandidate.
std::vector<double> solve_moment(const ObservationTable& table, const MomentModel& moment,
                                 const NuisanceValues& nuisances,
                                 std::span<const std::size_t> rows = {},
                                 double epsilon_tolerance = 0.0);

/// One full split: fold plan, initial estimates, localized fits, solve,
/// Jacobian and variance. Fold-level errors are returned as a discarded split.
/// With `complement`, the weighting propensity of every row is replaced by
/// 1 - complement->propensity (shared propensity across arms).
SplitResult run_split(const ObservationTable& table, const MomentModel& moment,
                      const LdmlConfig& config, std::size_t split_index,
                      const SplitResult* complement = nullptr);

/// All splits plus aggregation. Errors: all splits discarded (the first split's
/// error is rethrown), MissingInstrument, ConfigError.
EstimateReport run_ldml(const ObservationTable& table, const MomentModel& moment,
                        const LdmlConfig& config, const EstimateReport* complement = nullptr);

/// Difference of two arm reports computed on identical fold plans, with
/// Sigma from the differenced influence rows. `share_propensity` asserts that
/// the arms' weighting propensities are complementary (p0 = 1 - p1).
/// Errors: FoldPlanMismatch, InvalidArgument.
EstimateReport effect_difference(const EstimateReport& treated, const EstimateReport& control,
                                 bool share_propensity);

/// The table with treatment (and instrument, if any) flipped, so a T=1
/// estimand targets the control arm.
ObservationTable control_arm(const ObservationTable& table);

struct EffectReport {
  EstimateReport treated;
  EstimateReport control;
  EstimateReport difference;
};

/// Estimand on both arms with shared fold plans, then their difference.
/// With `share_propensity` the control arm weights by 1 - P(T=1|X) from the
/// treated arm's fits instead of refitting.
EffectReport run_treatment_effect(const ObservationTable& table, const MomentModel& moment,
                                  const LdmlConfig& config, bool share_propensity);

}  // namespace ldml
