#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldml/data.hpp"

namespace ldml {

enum class JacobianMethod { kKdeQuantile, kQcvarBlock, kExpectileCdf, kKdeLqte };
enum class SolverHint { kMonotoneStep, kStepScanThenLinear, kBisection };

/// Whether a nuisance must be re-fit for each localization point theta'_1.
enum class TaskDependence { kEstimandDependent, kEstimandIndependent };

/// Which rows a nuisance regression is trained on.
enum class Subsample { kAll, kTreated, kInstrumentOn, kInstrumentOff };

/// Learner configuration slot a nuisance regression draws from.
enum class LearnerSlot { kPropensity, kBinaryOutcome, kContinuousOutcome, kInstrumentPropensity };

std::string_view jacobian_method_name(JacobianMethod method);
std::string_view solver_hint_name(SolverHint hint);

/// One regression of a constructed label on X. For estimand-dependent tasks
/// the label depends on the localization point theta'_1; independent tasks
/// ignore it.
struct NuisanceTask {
  std::string name;
  TaskDependence dependence = TaskDependence::kEstimandIndependent;
  Subsample subsample = Subsample::kAll;
  LearnerSlot slot = LearnerSlot::kPropensity;
  bool probability = false;  // predictions are clipped to the probability range
  std::function<double(const Observation&, double theta_ref)> label;

  bool includes(const Observation& obs) const;
};

/// Per-row nuisance values handed to psi. eta1 holds the estimand-dependent
/// regressions and eta2 the estimand-independent ones, both in task order.
struct NuisanceRow {
  std::span<const double> eta1;
  std::span<const double> eta2;
  double nu = 1.0;
};

/// An estimating equation psi(Z; theta, eta1, eta2) with its nuisance,
/// Jacobian and solver recipes. theta_1 is always the first (scalar) component;
/// the remaining components enter linearly.
class MomentModel {
 public:
  virtual ~MomentModel() = default;

  const std::string& name() const { return name_; }
  std::size_t dim() const { return dim_; }
  std::size_t theta1_dim() const { return 1; }
  double gamma() const { return gamma_; }
  JacobianMethod jacobian_method() const { return jacobian_; }
  SolverHint solver_hint() const { return hint_; }

  const std::vector<NuisanceTask>& eta1_tasks() const { return eta1_tasks_; }
  const std::vector<NuisanceTask>& eta2_tasks() const { return eta2_tasks_; }
  /// Index in eta2 of the weighting propensity (P(T=1|X), or P(W=1|X) for IV).
  std::size_t propensity_index() const { return propensity_index_; }
  bool requires_instrument() const { return requires_instrument_; }
  bool uses_nu() const { return uses_nu_; }

  virtual void psi(const Observation& obs, std::span<const double> theta, const NuisanceRow& eta,
                   std::span<double> out) const = 0;

  /// The pure weighting equation used for initial estimates: same theta,
  /// no estimand-dependent nuisances.
  virtual std::shared_ptr<const MomentModel> initial_moment() const = 0;

 protected:
  MomentModel(std::string name, std::size_t dim, double gamma, JacobianMethod jacobian,
              SolverHint hint);

  std::string name_;
  std::size_t dim_;
  double gamma_;
  JacobianMethod jacobian_;
  SolverHint hint_;
  std::vector<NuisanceTask> eta1_tasks_;
  std::vector<NuisanceTask> eta2_tasks_;
  std::size_t propensity_index_ = 0;
  bool requires_instrument_ = false;
  bool uses_nu_ = false;
};

using MomentPtr = std::shared_ptr<const MomentModel>;

/// Complete-data moment P[U(Y(1); theta_1) + V(theta)] = 0.
struct CompleteDataMoment {
  std::size_t dim = 1;
  double gamma = 0.5;
  std::function<void(double y, double theta1, std::span<double> out)> u;
  std::function<void(std::span<const double> theta, std::span<double> out)> v;
};

CompleteDataMoment complete_quantile(double gamma);
/// U = (1[y<=t1], t1 + max(y-t1,0)/(1-g)), V = (-g, -t2).
CompleteDataMoment complete_quantile_cvar(double gamma);
/// U = (1-g)(y-t1) - (1-2g) max(y-t1, 0), V = 0.
CompleteDataMoment complete_expectile(double gamma);

/// Outcome regression among treated rows used to build E[U | X, T=1].
struct OutcomeRegression {
  std::string name;
  TaskDependence dependence = TaskDependence::kEstimandDependent;
  bool binary = false;
  std::function<double(double y, double theta_ref)> label;
};

/// Maps (theta, dependent regressions, independent regressions) to
/// E[U(Y; theta_1) | X, T=1] as the model approximates it.
using ConditionalMeanFn = std::function<void(std::span<const double> theta,
                                             std::span<const double> dependent,
                                             std::span<const double> independent,
                                             std::span<double> out)>;

/// Generic orthogonal equation for estimands defined by complete-data moments
/// under ignorability:
///   psi = 1[T=1]/pi(X) (U(Y; theta_1) - m) + m + V(theta),  m = E[U | X, T=1].
/// eta2 holds the independent regressions followed by the propensity.
MomentPtr make_incomplete_data_moment(std::string name, CompleteDataMoment complete,
                                      std::vector<OutcomeRegression> regressions,
                                      ConditionalMeanFn conditional_mean, JacobianMethod jacobian,
                                      SolverHint hint);

/// psi^IPW = 1[T=1] U(Y; theta_1)/pi(X) + V(theta); eta2 = {propensity}.
MomentPtr ipw_moment(CompleteDataMoment complete, SolverHint hint,
                     JacobianMethod jacobian = JacobianMethod::kKdeQuantile);

/// Efficient quantile equation; eta1 = P(Y <= theta' | X, T=1), eta2 = pi(X).
MomentPtr quantile_moment(double gamma);
/// Joint quantile and CVaR; eta1 = (P(Y <= theta'|X,T=1), E[max(Y-theta',0)|X,T=1]).
MomentPtr quantile_cvar_moment(double gamma);
/// Expectile; eta1 = E[max(Y-theta',0)|X,T=1], eta2 = (E[Y|X,T=1], pi(X)).
MomentPtr expectile_moment(double gamma);
/// Local (complier) quantile with a binary instrument W;
/// eta1 = (P(T=1,Y<=theta'|X,W=1), P(T=1,Y<=theta'|X,W=0)), eta2 = P(W=1|X),
/// nu = E[P(T=1|X,W=1) - P(T=1|X,W=0)].
MomentPtr lqte_moment(double gamma);

/// Looks up a named estimand: quantile | quantile_cvar | expectile | lqte.
/// Throws ConfigError for unknown names or gamma outside (0,1).
MomentPtr make_moment(std::string_view name, double gamma);

}  // namespace ldml
