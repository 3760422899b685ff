#include "ldml/engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "ldml/parallel.hpp"
#include "ldml/random.hpp"

namespace ldml {
namespace {

constexpr std::size_t kMaxDim = 8;

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

bool is_propensity_slot(LearnerSlot slot) {
  return slot == LearnerSlot::kPropensity || slot == LearnerSlot::kInstrumentPropensity;
}

struct TaskFits {
  std::vector<FittedPredictor> models;
  std::vector<std::vector<std::size_t>> rows;
};

// Fits each task on the rows of `candidates` it includes. Tasks sharing a
// subsample and learner slot are fit together on one feature matrix.
TaskFits fit_tasks(const ObservationTable& table, const std::vector<std::size_t>& candidates,
                   const std::vector<NuisanceTask>& tasks, double theta_ref,
                   const LearnerSet& learners, ClipRange clip, std::uint64_t seed,
                   std::string_view where) {
  TaskFits out;
  out.rows.resize(tasks.size());
  std::vector<std::optional<FittedPredictor>> models(tasks.size());

  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    groups[{static_cast<int>(tasks[t].subsample), static_cast<int>(tasks[t].slot)}].push_back(t);
  }
  for (const auto& [key, members] : groups) {
    const NuisanceTask& lead = tasks[members.front()];
    std::vector<std::size_t> rows;
    for (std::size_t i : candidates) {
      if (lead.includes(table.observation(i))) rows.push_back(i);
    }
    if (rows.empty()) {
      throw Error(ErrorCode::kEmptySubsample,
                  "no training rows for '" + lead.name + "' in " + std::string(where));
    }
    std::vector<std::vector<double>> targets;
    for (std::size_t t : members) {
      std::vector<double> labels(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        labels[r] = tasks[t].label(table.observation(rows[r]), theta_ref);
      }
      // An oracle never looks at its labels, so a single class is harmless.
      if (is_propensity_slot(tasks[t].slot) &&
          learners.for_slot(tasks[t].slot).kind != LearnerKind::kOracle) {
        const bool one_class = std::all_of(labels.begin(), labels.end(),
                                           [&](double v) { return v == labels.front(); });
        if (one_class) {
          throw Error(ErrorCode::kDegenerateTreatmentArm,
                      "'" + tasks[t].name + "' sees a single class in " + std::string(where));
        }
      }
      targets.push_back(std::move(labels));
    }
    const LearnerConfig& config = learners.for_slot(lead.slot);
    const Matrix features = table.select_covariates(rows);
    auto fitted = fit_many(config, features, targets,
                           derive_seed(seed, {static_cast<std::uint64_t>(key.first),
                                              static_cast<std::uint64_t>(key.second)}));
    for (std::size_t m = 0; m < members.size(); ++m) {
      const std::size_t t = members[m];
      FittedPredictor model = std::move(fitted[m]);
      if (tasks[t].probability && model.kind() != LearnerKind::kOracle) {
        model = model.with_clip(clip);
      }
      models[t] = std::move(model);
      out.rows[t] = rows;
    }
  }
  for (auto& m : models) out.models.push_back(std::move(*m));
  return out;
}

void check_theta(const std::vector<double>& theta, const MomentModel& moment) {
  if (theta.size() != moment.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "theta has " + std::to_string(theta.size()) +
                                                   " components, moment needs " +
                                                   std::to_string(moment.dim()));
  }
}

class EquationAverage {
 public:
  EquationAverage(const ObservationTable& table, const MomentModel& moment,
                  const NuisanceValues& nuisances, std::span<const std::size_t> rows)
      : table_(table), moment_(moment), nuisances_(nuisances), rows_(rows) {}

  void mean(std::span<const double> theta, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    std::array<double, kMaxDim> buf{};
    const std::span<double> row_psi(buf.data(), moment_.dim());
    for (std::size_t i : rows_) {
      moment_.psi(table_.observation(i), theta, nuisances_.row(i), row_psi);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += row_psi[j];
    }
    for (double& v : out) v /= static_cast<double>(rows_.size());
  }

  double first(double theta1, std::span<const double> rest) const {
    std::array<double, kMaxDim> theta{}, out{};
    theta[0] = theta1;
    std::copy(rest.begin(), rest.end(), theta.begin() + 1);
    mean(std::span(theta.data(), moment_.dim()), std::span(out.data(), moment_.dim()));
    return out[0];
  }

  // Components 2..d are linear in theta_2; solve them given theta_1.
  std::vector<double> complete(double theta1) const {
    const std::size_t d = moment_.dim();
    std::vector<double> theta(d, 0.0);
    theta[0] = theta1;
    if (d == 1) return theta;
    const std::size_t m = d - 1;
    std::vector<double> base(d), probe(d);
    mean(theta, base);
    Eigen::MatrixXd slope(m, m);
    Eigen::VectorXd rhs(m);
    for (std::size_t j = 0; j < m; ++j) {
      std::vector<double> unit = theta;
      unit[j + 1] = 1.0;
      mean(unit, probe);
      for (std::size_t r = 0; r < m; ++r) slope(r, j) = probe[r + 1] - base[r + 1];
      rhs(j) = -base[j + 1];
    }
    const auto qr = slope.colPivHouseholderQr();
    if (qr.rank() < static_cast<Eigen::Index>(m)) {
      throw Error(ErrorCode::kSolverNoCandidate, "secondary components are not identified");
    }
    const Eigen::VectorXd rest = qr.solve(rhs);
    for (std::size_t j = 0; j < m; ++j) theta[j + 1] = rest(j);
    return theta;
  }

  std::span<const std::size_t> rows() const { return rows_; }

 private:
  const ObservationTable& table_;
  const MomentModel& moment_;
  const NuisanceValues& nuisances_;
  std::span<const std::size_t> rows_;
};

std::vector<double> solve_step(const ObservationTable& table, const MomentModel& moment,
                               const NuisanceValues& nuisances, const EquationAverage& eq,
                               double epsilon_tolerance) {
  const auto rows = eq.rows();
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t i : rows) lowest = std::min(lowest, table.outcome(i));
  lowest -= 1.0;

  const std::size_t d = moment.dim();
  std::array<double, kMaxDim> theta{}, below{}, at{};
  const double scale = 1.0 / static_cast<double>(rows.size());
  double offset = 0.0;
  bool monotone = moment.solver_hint() == SolverHint::kMonotoneStep;
  std::vector<StepPoint> points;
  for (std::size_t i : rows) {
    const Observation obs = table.observation(i);
    const NuisanceRow eta = nuisances.row(i);
    theta[0] = lowest;
    moment.psi(obs, std::span(theta.data(), d), eta, std::span(below.data(), d));
    theta[0] = obs.outcome;
    moment.psi(obs, std::span(theta.data(), d), eta, std::span(at.data(), d));
    offset += below[0] * scale;
    const double jump = (at[0] - below[0]) * scale;
    if (jump != 0.0) {
      points.push_back({obs.outcome, jump});
      if (jump < 0.0) monotone = false;
    }
  }
  if (points.empty()) {
    throw Error(ErrorCode::kSolverNoCandidate, "estimating equation has no jump points");
  }
  const StepSolution sol = solve_step_equation(points, offset, monotone);
  const StepSolution best = scan_step_equation(points, offset);
  if (std::abs(sol.residual) > std::abs(best.residual) + epsilon_tolerance) {
    throw Error(ErrorCode::kSolverNoCandidate, "solver residual exceeds the candidate minimum");
  }
  return eq.complete(sol.root);
}

std::vector<double> solve_linear_pieces(const ObservationTable& table, const EquationAverage& eq) {
  std::vector<double> breakpoints;
  for (std::size_t i : eq.rows()) breakpoints.push_back(table.outcome(i));
  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()), breakpoints.end());
  const double root = solve_piecewise_linear(breakpoints, [&](double t1) {
    const std::vector<double> theta = eq.complete(t1);
    return eq.first(t1, std::span(theta).subspan(1));
  });
  return eq.complete(root);
}

Matrix median_matrix(const std::vector<Matrix>& mats) {
  Matrix out = mats.front();
  std::vector<double> vals(mats.size());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      for (std::size_t s = 0; s < mats.size(); ++s) vals[s] = mats[s](r, c);
      std::sort(vals.begin(), vals.end());
      const std::size_t h = vals.size() / 2;
      out(r, c) = vals.size() % 2 ? vals[h] : 0.5 * (vals[h - 1] + vals[h]);
    }
  }
  return out;
}

std::string discard_message(const SplitResult& s) {
  return "split " + std::to_string(s.index) + " discarded: " + s.error;
}

}  // namespace

std::string_view variant_name(Variant v) { return v == Variant::kLdml1 ? "ldml1" : "ldml2"; }

Variant parse_variant(std::string_view name) {
  if (name == "ldml1") return Variant::kLdml1;
  if (name == "ldml2") return Variant::kLdml2;
  throw Error(ErrorCode::kConfigError, "unknown variant '" + std::string(name) + "'");
}

std::string_view aggregate_rule_name(AggregateRule rule) {
  return rule == AggregateRule::kMean ? "mean" : "median";
}

AggregateRule parse_aggregate_rule(std::string_view name) {
  if (name == "median") return AggregateRule::kMedian;
  if (name == "mean") return AggregateRule::kMean;
  throw Error(ErrorCode::kConfigError, "unknown aggregate rule '" + std::string(name) + "'");
}

const LearnerConfig& LearnerSet::for_slot(LearnerSlot slot) const {
  switch (slot) {
    case LearnerSlot::kPropensity: return propensity;
    case LearnerSlot::kBinaryOutcome: return binary_outcome;
    case LearnerSlot::kContinuousOutcome: return continuous_outcome;
    case LearnerSlot::kInstrumentPropensity: return instrument_propensity;
  }
  return propensity;
}

void LdmlConfig::validate() const {
  if (folds < 3) throw Error(ErrorCode::kConfigError, "K must be at least 3");
  if (kprime < 1 || kprime + 2 > folds) throw Error(ErrorCode::kConfigError, "K' outside [1, K-2]");
  if (splits < 1) throw Error(ErrorCode::kConfigError, "splits must be at least 1");
  if (!(epsilon_tolerance >= 0.0)) throw Error(ErrorCode::kConfigError, "epsilon must be >= 0");
  if (!(clip.lo > 0.0 && clip.lo < clip.hi && clip.hi < 1.0)) {
    throw Error(ErrorCode::kConfigError, "clip range must satisfy 0 < lo < hi < 1");
  }
  if (kde.bandwidth && !(*kde.bandwidth > 0.0)) {
    throw Error(ErrorCode::kConfigError, "bandwidth must be positive");
  }
  learners.propensity.validate();
  learners.binary_outcome.validate();
  learners.continuous_outcome.validate();
  learners.instrument_propensity.validate();
}

NuisanceRow NuisanceValues::row(std::size_t i) const {
  const auto e1 = static_cast<std::size_t>(eta1.cols());
  const auto e2 = static_cast<std::size_t>(eta2.cols());
  return {std::span<const double>(eta1.data() + i * e1, e1),
          std::span<const double>(eta2.data() + i * e2, e2), nu};
}

ConfidenceInterval EstimateReport::interval(std::size_t component, double alpha) const {
  VarianceEstimate v;
  v.sigma = sigma;
  v.n = n;
  std::vector<double> contrast(theta.size(), 0.0);
  contrast.at(component) = 1.0;
  return confidence_interval(theta, v, contrast, alpha);
}

std::vector<double> fit_initial(const ObservationTable& table, const FoldPlan& plan,
                                std::size_t fold, const MomentModel& initial_moment,
                                const LearnerSet& learners, ClipRange clip, double nu,
                                std::uint64_t seed, bool normalize_weights,
                                std::vector<std::size_t>* training_rows) {
  if (plan.kprime() < 2) {
    throw Error(ErrorCode::kKPrimeTooSmall, "the initial estimator needs K' >= 2");
  }
  if (!initial_moment.eta1_tasks().empty()) {
    throw Error(ErrorCode::kInvalidArgument, "initial moment must not localize");
  }
  const auto& h1 = plan.h1(fold);
  NuisanceValues values;
  values.eta1 = Matrix(static_cast<Eigen::Index>(table.n()), 0);
  values.eta2 = Matrix::Zero(static_cast<Eigen::Index>(table.n()),
                             static_cast<Eigen::Index>(initial_moment.eta2_tasks().size()));
  values.nu = nu;
  for (std::size_t l : h1) {
    std::vector<std::size_t> train_folds;
    for (std::size_t j : h1) {
      if (j != l) train_folds.push_back(j);
    }
    const auto train = plan.rows_in(train_folds);
    const std::string where = "fold " + std::to_string(fold) + " inner fold " + std::to_string(l);
    const TaskFits fits = fit_tasks(table, train, initial_moment.eta2_tasks(), 0.0, learners, clip,
                                    derive_seed(seed, {l}), where);
    for (std::size_t i : plan.fold_rows(l)) {
      for (std::size_t t = 0; t < fits.models.size(); ++t) {
        values.eta2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) =
            fits.models[t].predict_row(table.row(i));
      }
    }
    if (normalize_weights && !initial_moment.uses_nu()) {
      normalize_propensity_weights(table, plan.fold_rows(l), values.eta2,
                                   static_cast<Eigen::Index>(initial_moment.propensity_index()));
    }
  }
  const auto rows = plan.rows_in(h1);
  if (training_rows) *training_rows = rows;
  return solve_moment(table, initial_moment, values, rows);
}

std::vector<double> fit_initial_ipw(const ObservationTable& table, const FoldPlan& plan,
                                    std::size_t fold, const LearnerConfig& propensity,
                                    const MomentModel& ipw, ClipRange clip, std::uint64_t seed) {
  LearnerSet learners;
  learners.propensity = propensity;
  return fit_initial(table, plan, fold, ipw, learners, clip, 1.0, seed);
}

std::vector<double> fit_initial_lqte_weighting(const ObservationTable& table,
                                               const FoldPlan& plan, std::size_t fold,
                                               const LearnerConfig& instrument_propensity,
                                               double gamma, double nu, ClipRange clip,
                                               std::uint64_t seed) {
  if (!table.has_instrument()) {
    throw Error(ErrorCode::kMissingInstrument, "local quantile needs an instrument column");
  }
  if (!(nu >= kMinNu)) {
    throw Error(ErrorCode::kNuTooSmall, "complier share " + std::to_string(nu) + " below 0.01");
  }
  LearnerSet learners;
  learners.instrument_propensity = instrument_propensity;
  const auto moment = lqte_moment(gamma)->initial_moment();
  return fit_initial(table, plan, fold, *moment, learners, clip, nu, seed);
}

CrossFitState fit_localized_nuisances(const ObservationTable& table, const FoldPlan& plan,
                                      std::vector<std::vector<double>> theta_init,
                                      const MomentModel& moment, const LearnerSet& learners,
                                      ClipRange clip, std::uint64_t seed) {
  const std::size_t folds = plan.folds();
  if (theta_init.size() != folds) {
    throw Error(ErrorCode::kDimensionMismatch, "one initial estimate per fold is required");
  }
  CrossFitState state{plan, std::move(theta_init), {}, {}, {}, {}, {}, std::nullopt};
  state.eta1_models.resize(folds);
  state.eta2_models.resize(folds);
  state.eta1_rows.resize(folds);
  state.eta2_rows.resize(folds);
  state.init_rows.resize(folds);
  for (std::size_t k = 0; k < folds; ++k) {
    check_theta(state.theta_init[k], moment);
    const std::string where = "fold " + std::to_string(k);
    TaskFits local = fit_tasks(table, plan.rows_in(plan.h2(k)), moment.eta1_tasks(),
                               state.theta_init[k][0], learners, clip,
                               derive_seed(seed, {k, 1}), where);
    TaskFits global = fit_tasks(table, plan.rows_outside(k), moment.eta2_tasks(), 0.0, learners,
                                clip, derive_seed(seed, {k, 2}), where);
    state.eta1_models[k] = std::move(local.models);
    state.eta1_rows[k] = std::move(local.rows);
    state.eta2_models[k] = std::move(global.models);
    state.eta2_rows[k] = std::move(global.rows);
  }
  return state;
}

void normalize_propensity_weights(const ObservationTable& table,
                                  std::span<const std::size_t> rows, Matrix& eta2,
                                  Eigen::Index column) {
  if (rows.empty()) return;
  double total = 0.0;
  for (std::size_t i : rows) {
    if (table.treatment(i) == 1) total += 1.0 / eta2(static_cast<Eigen::Index>(i), column);
  }
  const double factor = total / static_cast<double>(rows.size());
  if (!(factor > 0.0)) return;
  for (std::size_t i : rows) eta2(static_cast<Eigen::Index>(i), column) *= factor;
}

NuisanceValues evaluate_nuisances(const ObservationTable& table, const CrossFitState& state,
                                  const MomentModel& moment, bool normalize_weights) {
  const auto n = static_cast<Eigen::Index>(table.n());
  NuisanceValues values;
  values.eta1 = Matrix::Zero(n, static_cast<Eigen::Index>(moment.eta1_tasks().size()));
  values.eta2 = Matrix::Zero(n, static_cast<Eigen::Index>(moment.eta2_tasks().size()));
  values.nu = state.nu_hat.value_or(1.0);
  const auto pidx = static_cast<Eigen::Index>(moment.propensity_index());
  for (std::size_t k = 0; k < state.plan.folds(); ++k) {
    const auto& rows = state.plan.fold_rows(k);
    for (std::size_t i : rows) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto x = table.row(i);
      for (std::size_t t = 0; t < state.eta1_models[k].size(); ++t) {
        values.eta1(r, static_cast<Eigen::Index>(t)) = state.eta1_models[k][t].predict_row(x);
      }
      for (std::size_t t = 0; t < state.eta2_models[k].size(); ++t) {
        values.eta2(r, static_cast<Eigen::Index>(t)) = state.eta2_models[k][t].predict_row(x);
      }
    }
    if (normalize_weights && !moment.uses_nu()) {
      normalize_propensity_weights(table, rows, values.eta2, pidx);
    }
  }
  return values;
}

Matrix psi_rows(const ObservationTable& table, const MomentModel& moment,
                std::span<const double> theta, const NuisanceValues& nuisances,
                std::span<const std::size_t> rows) {
  const std::vector<std::size_t> every = rows.empty() ? all_rows(table.n()) : std::vector<std::size_t>{};
  const std::span<const std::size_t> use = rows.empty() ? std::span<const std::size_t>(every) : rows;
  Matrix out(static_cast<Eigen::Index>(use.size()), static_cast<Eigen::Index>(moment.dim()));
  for (std::size_t r = 0; r < use.size(); ++r) {
    moment.psi(table.observation(use[r]), theta, nuisances.row(use[r]),
               std::span<double>(out.data() + r * moment.dim(), moment.dim()));
  }
  return out;
}

std::vector<double> solve_moment(const ObservationTable& table, const MomentModel& moment,
                                 const NuisanceValues& nuisances,
                                 std::span<const std::size_t> rows, double epsilon_tolerance) {
  const std::vector<std::size_t> every = rows.empty() ? all_rows(table.n()) : std::vector<std::size_t>{};
  const std::span<const std::size_t> use = rows.empty() ? std::span<const std::size_t>(every) : rows;
  if (use.empty()) throw Error(ErrorCode::kSolverNoCandidate, "no rows to average");
  const EquationAverage eq(table, moment, nuisances, use);
  if (moment.solver_hint() == SolverHint::kBisection) return solve_linear_pieces(table, eq);
  return solve_step(table, moment, nuisances, eq, epsilon_tolerance);
}

SplitResult run_split(const ObservationTable& table, const MomentModel& moment,
                      const LdmlConfig& config, std::size_t split_index,
                      const SplitResult* complement) {
  SplitResult result;
  result.index = split_index;
  result.seed = derive_seed(config.seed, {split_index});
  const std::uint64_t seed = result.seed;

  std::optional<std::span<const int>> strata;
  if (config.stratify) {
    strata = config.stratify_on ? std::span<const int>(*config.stratify_on)
                                : std::span<const int>(table.treatments());
  }
  const FoldPlan plan = make_fold_plan(table.n(), config.folds, config.kprime, seed, strata);
  result.plan = plan;
  if (complement && !(complement->plan && *complement->plan == plan)) {
    throw Error(ErrorCode::kFoldPlanMismatch, "shared propensity needs identical fold plans");
  }

  try {
    std::optional<double> nu;
    if (moment.uses_nu()) {
      nu = estimate_nu_dml(table, plan, config.learners.instrument_propensity,
                           config.learners.propensity, config.clip, derive_seed(seed, {3}));
    }
    std::vector<std::vector<double>> theta_init(plan.folds());
    std::vector<std::vector<std::size_t>> init_rows(plan.folds());
    const auto initial = moment.initial_moment();
    for (std::size_t k = 0; k < plan.folds(); ++k) {
      if (config.fixed_initial) {
        theta_init[k] = *config.fixed_initial;
      } else {
        theta_init[k] = fit_initial(table, plan, k, *initial, config.learners, config.clip,
                                    nu.value_or(1.0), derive_seed(seed, {1, k}),
                                    config.normalize_weights, &init_rows[k]);
      }
    }
    CrossFitState state = fit_localized_nuisances(table, plan, theta_init, moment,
                                                  config.learners, config.clip,
                                                  derive_seed(seed, {2}));
    state.init_rows = std::move(init_rows);
    state.nu_hat = nu;
    NuisanceValues values = evaluate_nuisances(table, state, moment, config.normalize_weights);
    const auto pidx = static_cast<Eigen::Index>(moment.propensity_index());
    if (complement) {
      for (Eigen::Index i = 0; i < values.eta2.rows(); ++i) {
        values.eta2(i, pidx) = 1.0 - complement->propensity[static_cast<std::size_t>(i)];
      }
    }

    if (config.variant == Variant::kLdml2) {
      result.theta = solve_moment(table, moment, values, {}, config.epsilon_tolerance);
    } else {
      result.theta.assign(moment.dim(), 0.0);
      for (std::size_t k = 0; k < plan.folds(); ++k) {
        const auto fold_theta =
            solve_moment(table, moment, values, plan.fold_rows(k), config.epsilon_tolerance);
        for (std::size_t j = 0; j < moment.dim(); ++j) {
          result.theta[j] += fold_theta[j] / static_cast<double>(plan.folds());
        }
        result.folds.resize(plan.folds());
        result.folds[k].theta_fold = fold_theta;
      }
    }

    result.propensity.resize(table.n());
    for (std::size_t i = 0; i < table.n(); ++i) {
      result.propensity[i] = values.eta2(static_cast<Eigen::Index>(i), pidx);
    }
    result.jacobian = estimate_jacobian(moment, table, result.propensity, result.theta,
                                        config.kde, values.nu);
    const Matrix psi = psi_rows(table, moment, result.theta, values);
    result.residual = psi.colwise().mean().norm();
    VarianceEstimate variance = estimate_variance(psi, result.jacobian);
    result.sigma = std::move(variance.sigma);
    result.influence = std::move(variance.influence);
    result.sigma_repaired = variance.repaired;
    result.nu_hat = nu;

    result.folds.resize(plan.folds());
    for (std::size_t k = 0; k < plan.folds(); ++k) {
      auto& diag = result.folds[k];
      diag.theta_init = state.theta_init[k];
      diag.init_training_rows = state.init_rows[k].size();
      for (const auto& rows : state.eta1_rows[k]) diag.eta1_training_rows.push_back(rows.size());
      for (const auto& rows : state.eta2_rows[k]) diag.eta2_training_rows.push_back(rows.size());
    }
    result.ok = true;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptySubsample && e.code() != ErrorCode::kDegenerateTreatmentArm) {
      throw;
    }
    result = SplitResult{};
    result.index = split_index;
    result.seed = seed;
    result.plan = plan;
    result.error_code = e.code();
    result.error = e.what();
  }
  return result;
}

EstimateReport run_ldml(const ObservationTable& table, const MomentModel& moment,
                        const LdmlConfig& config, const EstimateReport* complement) {
  config.validate();
  if (moment.requires_instrument() && !table.has_instrument()) {
    throw Error(ErrorCode::kMissingInstrument,
                "estimand '" + moment.name() + "' needs an instrument column");
  }
  if (config.fixed_initial) {
    std::vector<double> theta = *config.fixed_initial;
    check_theta(theta, moment);
  }
  if (complement && complement->splits.size() != config.splits) {
    throw Error(ErrorCode::kFoldPlanMismatch, "arms ran a different number of splits");
  }

  std::vector<SplitResult> splits(config.splits);
  parallel_for(config.splits, config.threads, [&](std::size_t s) {
    const SplitResult* other = nullptr;
    if (complement) {
      other = &complement->splits[s];
      if (!other->ok) {
        splits[s].index = s;
        splits[s].error_code = other->error_code;
        splits[s].error = "paired split was discarded";
        splits[s].plan = other->plan;
        return;
      }
    }
    splits[s] = run_split(table, moment, config, s, other);
  });

  EstimateReport report;
  report.estimand = moment.name();
  report.gamma = moment.gamma();
  report.n = table.n();
  report.aggregate = config.aggregate;
  std::vector<std::vector<double>> thetas;
  std::vector<Matrix> sigmas, jacobians;
  for (const auto& s : splits) {
    if (s.ok) {
      thetas.push_back(s.theta);
      sigmas.push_back(s.sigma);
      jacobians.push_back(s.jacobian.matrix);
      if (s.sigma_repaired) {
        report.warnings.push_back("split " + std::to_string(s.index) +
                                  ": variance repaired to positive semidefinite");
      }
    } else {
      report.warnings.push_back(discard_message(s));
    }
  }
  if (thetas.empty()) {
    const SplitResult& first = splits.front();
    throw Error(first.error_code.value_or(ErrorCode::kInvalidArgument),
                "every split was discarded; first: " + first.error);
  }
  AggregateResult agg = aggregate_splits(thetas, sigmas, config.aggregate,
                                         static_cast<double>(table.n()));
  if (agg.repaired) report.warnings.push_back("aggregated variance repaired to positive semidefinite");
  report.theta = std::move(agg.theta);
  report.sigma = std::move(agg.sigma);
  report.jacobian = median_matrix(jacobians);
  for (Eigen::Index j = 0; j < report.sigma.rows(); ++j) {
    report.stderr_.push_back(std::sqrt(report.sigma(j, j) / static_cast<double>(table.n())));
  }
  report.splits = std::move(splits);
  return report;
}

EstimateReport effect_difference(const EstimateReport& treated, const EstimateReport& control,
                                 bool share_propensity) {
  if (treated.splits.size() != control.splits.size() || treated.n != control.n ||
      treated.theta.size() != control.theta.size()) {
    throw Error(ErrorCode::kFoldPlanMismatch, "arm reports do not describe the same runs");
  }
  EstimateReport diff;
  diff.estimand = treated.estimand + "_effect";
  diff.gamma = treated.gamma;
  diff.n = treated.n;
  diff.aggregate = treated.aggregate;
  std::vector<std::vector<double>> thetas;
  std::vector<Matrix> sigmas, jacobians;
  for (std::size_t s = 0; s < treated.splits.size(); ++s) {
    const SplitResult& a = treated.splits[s];
    const SplitResult& b = control.splits[s];
    if (!a.plan || !b.plan || !(*a.plan == *b.plan)) {
      throw Error(ErrorCode::kFoldPlanMismatch,
                  "split " + std::to_string(s) + " used different fold plans");
    }
    SplitResult out;
    out.index = s;
    out.seed = a.seed;
    out.plan = a.plan;
    if (!a.ok || !b.ok) {
      out.error = !a.ok ? a.error : b.error;
      out.error_code = !a.ok ? a.error_code : b.error_code;
      diff.warnings.push_back(discard_message(out));
      diff.splits.push_back(std::move(out));
      continue;
    }
    if (share_propensity) {
      for (std::size_t i = 0; i < a.propensity.size(); ++i) {
        if (std::abs(a.propensity[i] + b.propensity[i] - 1.0) > 1e-9) {
          throw Error(ErrorCode::kInvalidArgument,
                      "arms do not share the propensity (row " + std::to_string(i) + ")");
        }
      }
    }
    out.ok = true;
    out.theta.resize(a.theta.size());
    for (std::size_t j = 0; j < a.theta.size(); ++j) out.theta[j] = a.theta[j] - b.theta[j];
    VarianceEstimate v = variance_from_influence(a.influence - b.influence);
    out.sigma = v.sigma;
    out.influence = std::move(v.influence);
    out.sigma_repaired = v.repaired;
    out.jacobian = a.jacobian;
    thetas.push_back(out.theta);
    sigmas.push_back(out.sigma);
    jacobians.push_back(a.jacobian.matrix);
    diff.splits.push_back(std::move(out));
  }
  if (thetas.empty()) throw Error(ErrorCode::kInvalidArgument, "no split survived in both arms");
  AggregateResult agg =
      aggregate_splits(thetas, sigmas, diff.aggregate, static_cast<double>(diff.n));
  diff.theta = std::move(agg.theta);
  diff.sigma = std::move(agg.sigma);
  diff.jacobian = median_matrix(jacobians);
  for (Eigen::Index j = 0; j < diff.sigma.rows(); ++j) {
    diff.stderr_.push_back(std::sqrt(diff.sigma(j, j) / static_cast<double>(diff.n)));
  }
  return diff;
}

ObservationTable control_arm(const ObservationTable& table) {
  std::vector<int> flipped(table.treatments());
  for (int& t : flipped) t = 1 - t;
  // Flipping W as well keeps the complier share positive, so the local
  // quantile equation on the flipped table targets the complier Y(0).
  std::optional<std::vector<int>> instrument = table.instruments();
  if (instrument) {
    for (int& w : *instrument) w = 1 - w;
  }
  return ObservationTable(table.covariates(), std::move(flipped), table.outcomes(),
                          std::move(instrument), table.covariate_names());
}

EffectReport run_treatment_effect(const ObservationTable& table, const MomentModel& moment,
                                  const LdmlConfig& config, bool share_propensity) {
  LdmlConfig arm_config = config;
  arm_config.stratify_on = table.treatments();
  EffectReport out;
  out.treated = run_ldml(table, moment, arm_config);
  out.control = run_ldml(control_arm(table), moment, arm_config,
                         share_propensity ? &out.treated : nullptr);
  out.difference = effect_difference(out.treated, out.control, share_propensity);
  return out;
}

}  // namespace ldml
