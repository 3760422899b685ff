#include "ldml/simlab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ldml/error.hpp"
#include "ldml/inference.hpp"
#include "ldml/normal.hpp"
#include "ldml/parallel.hpp"
#include "ldml/random.hpp"

namespace ldml {
namespace {

// reference_oracle values: true_quantile_oracle(2/3, 10'000'000, 20240611, ...).
constexpr OracleQuantile kOracleVariance{0.96411756213193456, 0.00039665931929546940};
constexpr OracleQuantile kOracleSd{0.98483749974580004, 0.00027424888491224195};

double noise_scale(double x3, NoiseConvention noise) {
  return noise == NoiseConvention::kVariance ? std::sqrt(2.0 * x3) : 2.0 * x3;
}

double potential_outcome(double x1, double x2, double x3, double z, NoiseConvention noise) {
  return (x1 + x2 <= 1.0 ? 1.0 : 0.0) + noise_scale(x3, noise) * z;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// Order statistic ceil(q m) (1-based) of the values, i.e. the inverse ECDF at q.
double inverse_ecdf(std::vector<double>& values, double q) {
  const auto m = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * m - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   values.end());
  return values[rank - 1];
}

Matrix dgp_covariates(std::size_t n, Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kDgpDimension));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.uniform();
  }
  return x;
}

MethodEstimate estimate_from_psi(const ObservationTable& table, const MomentModel& moment,
                                 double theta, const NuisanceValues& values,
                                 std::span<const double> propensity) {
  const std::vector<double> t{theta};
  const JacobianEstimate jac =
      estimate_jacobian_kde(table, propensity, theta, KdeMode::kTreated);
  const VarianceEstimate var = estimate_variance(psi_rows(table, moment, t, values), jac);
  return {theta, std::sqrt(var.sigma(0, 0) / static_cast<double>(table.n()))};
}

}  // namespace

std::string_view noise_convention_name(NoiseConvention c) {
  return c == NoiseConvention::kVariance ? "variance" : "sd";
}

NoiseConvention parse_noise_convention(std::string_view name) {
  if (name == "variance") return NoiseConvention::kVariance;
  if (name == "sd") return NoiseConvention::kSd;
  throw Error(ErrorCode::kConfigError, "unknown noise convention '" + std::string(name) + "'");
}

double dgp_propensity(std::span<const double> x) { return normal_cdf(3.0 * (1.0 - x[0] - x[2])); }

double dgp_outcome_cdf(double y, std::span<const double> x, NoiseConvention noise) {
  const double mean = x[0] + x[1] <= 1.0 ? 1.0 : 0.0;
  const double s = noise_scale(x[2], noise);
  if (s == 0.0) return y >= mean ? 1.0 : 0.0;
  return normal_cdf((y - mean) / s);
}

ObservationTable generate_dgp(const DgpConfig& config) {
  Rng rng(config.seed);
  Matrix x = dgp_covariates(config.n, rng);
  std::vector<int> t(config.n);
  std::vector<double> y(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const std::span<const double> row(x.data() + i * kDgpDimension, kDgpDimension);
    t[i] = rng.bernoulli(dgp_propensity(row)) ? 1 : 0;
    y[i] = potential_outcome(x(r, 0), x(r, 1), x(r, 2), rng.normal(), config.noise);
  }
  return ObservationTable(std::move(x), std::move(t), std::move(y));
}

ObservationTable generate_iv_dgp(const DgpConfig& config) {
  Rng rng(config.seed);
  Matrix x = dgp_covariates(config.n, rng);
  std::vector<int> w(config.n), t(config.n);
  std::vector<double> y(config.n);
  for (std::size_t i = 0; i < config.n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    w[i] = rng.bernoulli(0.5) ? 1 : 0;
    t[i] = w[i];
    const double y1 = potential_outcome(x(r, 0), x(r, 1), x(r, 2), rng.normal(), config.noise);
    const double y0 = x(r, 1) + rng.normal();
    y[i] = t[i] == 1 ? y1 : y0;
  }
  return ObservationTable(std::move(x), std::move(t), std::move(y), std::move(w));
}

OracleQuantile true_quantile_oracle(double gamma, std::size_t draws, std::uint64_t seed,
                                    NoiseConvention noise) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorCode::kInvalidArgument, "gamma in (0,1)");
  if (draws < 1'000'000) throw Error(ErrorCode::kInvalidArgument, "oracle needs >= 10^6 draws");
  Rng rng(seed);
  std::vector<double> y(draws);
  for (double& v : y) {
    const double x1 = rng.uniform(), x2 = rng.uniform(), x3 = rng.uniform();
    v = potential_outcome(x1, x2, x3, rng.normal(), noise);
  }
  const double q = inverse_ecdf(y, gamma);
  const double iqr = inverse_ecdf(y, 0.75) - inverse_ecdf(y, 0.25);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(draws);
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(draws - 1));
  const double h = 0.9 * std::min(sd, iqr / 1.34) * std::pow(static_cast<double>(draws), -0.2);
  double density = 0.0;
  for (double v : y) density += normal_pdf((v - q) / h);
  density /= static_cast<double>(draws) * h;
  const double se = std::sqrt(gamma * (1.0 - gamma) / static_cast<double>(draws)) / density;
  return {q, se};
}

OracleQuantile reference_oracle(NoiseConvention noise) {
  return noise == NoiseConvention::kVariance ? kOracleVariance : kOracleSd;
}

MethodEstimate baseline_ipw(const ObservationTable& table, double gamma, std::size_t folds,
                            const LearnerSet& learners, ClipRange clip, std::uint64_t seed,
                            bool normalize_weights) {
  const FoldPlan plan = make_fold_plan(table.n(), folds, 1, seed, table.treatments());
  const MomentPtr moment = ipw_moment(complete_quantile(gamma), SolverHint::kMonotoneStep);
  const NuisanceTask& task = moment->eta2_tasks().front();
  NuisanceValues values;
  values.eta1 = Matrix(static_cast<Eigen::Index>(table.n()), 0);
  values.eta2 = Matrix::Zero(static_cast<Eigen::Index>(table.n()), 1);
  for (std::size_t k = 0; k < folds; ++k) {
    const auto train = plan.rows_outside(k);
    std::vector<double> labels(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) labels[r] = task.label(table.observation(train[r]), 0.0);
    if (std::all_of(labels.begin(), labels.end(), [&](double v) { return v == labels.front(); })) {
      throw Error(ErrorCode::kDegenerateTreatmentArm, "one treatment class outside a fold");
    }
    FittedPredictor pi = fit(learners.propensity, table.select_covariates(train), labels,
                             derive_seed(seed, {k}));
    if (pi.kind() != LearnerKind::kOracle) pi = pi.with_clip(clip);
    for (std::size_t i : plan.fold_rows(k)) {
      values.eta2(static_cast<Eigen::Index>(i), 0) = pi.predict_row(table.row(i));
    }
    if (normalize_weights) normalize_propensity_weights(table, plan.fold_rows(k), values.eta2, 0);
  }
  const double theta = solve_moment(table, *moment, values)[0];
  std::vector<double> propensity(values.eta2.data(), values.eta2.data() + table.n());
  return estimate_from_psi(table, *moment, theta, values, propensity);
}

std::vector<double> dml_d_grid(const ObservationTable& table) {
  std::vector<double> treated;
  for (std::size_t i = 0; i < table.n(); ++i) {
    if (table.treatment(i) == 1) treated.push_back(table.outcome(i));
  }
  if (treated.empty()) throw Error(ErrorCode::kEmptySubsample, "no treated outcomes for the grid");
  std::vector<double> grid;
  for (int j = 1; j <= 99; ++j) grid.push_back(inverse_ecdf(treated, j / 100.0));
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

MethodEstimate baseline_dml_d(const ObservationTable& table, double gamma, std::size_t folds,
                              const LearnerSet& learners, ClipRange clip, std::uint64_t seed,
                              bool normalize_weights) {
  const FoldPlan plan = make_fold_plan(table.n(), folds, 1, seed, table.treatments());
  const std::vector<double> grid = dml_d_grid(table);
  const std::size_t g = grid.size();
  const std::size_t n = table.n();
  Matrix pi_values(static_cast<Eigen::Index>(n), 1);
  Matrix cdf(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g));
  for (std::size_t k = 0; k < folds; ++k) {
    const auto outside = plan.rows_outside(k);
    std::vector<double> t_labels(outside.size());
    std::vector<std::size_t> treated;
    for (std::size_t r = 0; r < outside.size(); ++r) {
      t_labels[r] = table.treatment(outside[r]);
      if (table.treatment(outside[r]) == 1) treated.push_back(outside[r]);
    }
    if (treated.empty()) throw Error(ErrorCode::kEmptySubsample, "no treated rows outside a fold");
    if (treated.size() == outside.size()) {
      throw Error(ErrorCode::kDegenerateTreatmentArm, "one treatment class outside a fold");
    }
    FittedPredictor pi = fit(learners.propensity, table.select_covariates(outside), t_labels,
                             derive_seed(seed, {k, 0}));
    if (pi.kind() != LearnerKind::kOracle) pi = pi.with_clip(clip);
    std::vector<std::vector<double>> targets(g, std::vector<double>(treated.size()));
    for (std::size_t j = 0; j < g; ++j) {
      for (std::size_t r = 0; r < treated.size(); ++r) {
        targets[j][r] = table.outcome(treated[r]) <= grid[j] ? 1.0 : 0.0;
      }
    }
    auto models = fit_many(learners.binary_outcome, table.select_covariates(treated), targets,
                           derive_seed(seed, {k, 1}));
    for (auto& m : models) {
      if (m.kind() != LearnerKind::kOracle) m = m.with_clip(clip);
    }
    for (std::size_t i : plan.fold_rows(k)) {
      const auto x = table.row(i);
      pi_values(static_cast<Eigen::Index>(i), 0) = pi.predict_row(x);
      for (std::size_t j = 0; j < g; ++j) {
        cdf(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = models[j].predict_row(x);
      }
    }
    if (normalize_weights) normalize_propensity_weights(table, plan.fold_rows(k), pi_values, 0);
  }
  const std::vector<double> propensity(pi_values.data(), pi_values.data() + n);

  std::size_t best = 0;
  double best_abs = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < g; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = cdf(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      const double hit = table.outcome(i) <= grid[j] ? 1.0 : 0.0;
      total += (table.treatment(i) == 1 ? (hit - mu) / propensity[i] : 0.0) + mu - gamma;
    }
    const double value = std::abs(total / static_cast<double>(n));
    if (value < best_abs) {
      best_abs = value;
      best = j;
    }
  }

  const MomentPtr moment = quantile_moment(gamma);
  NuisanceValues values;
  values.eta1 = cdf.col(static_cast<Eigen::Index>(best));
  values.eta2 = pi_values;
  return estimate_from_psi(table, *moment, grid[best], values, propensity);
}

LearnerSet study_learners() {
  const LearnerConfig g = LearnerConfig::gbt(100, 3, 0.05, 20);
  return {g, g, g, g};
}

std::string_view study_method_name(StudyMethod m) {
  switch (m) {
    case StudyMethod::kLdml: return "ldml";
    case StudyMethod::kIpw: return "ipw";
    case StudyMethod::kDmlD: return "dml_d";
  }
  return "unknown";
}

StudyMethod parse_study_method(std::string_view name) {
  if (name == "ldml") return StudyMethod::kLdml;
  if (name == "ipw") return StudyMethod::kIpw;
  if (name == "dml_d") return StudyMethod::kDmlD;
  throw Error(ErrorCode::kUnknownMethod, "unknown method '" + std::string(name) + "'");
}

MethodEstimate run_study_method(const ObservationTable& table, StudyMethod method,
                                const StudyConfig& config, std::uint64_t seed) {
  const std::size_t runs = std::max<std::size_t>(config.runs_per_rep, 1);
  std::vector<double> thetas, ses;
  for (std::size_t r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = derive_seed(seed, {r});
    MethodEstimate est;
    switch (method) {
      case StudyMethod::kLdml: {
        LdmlConfig lc;
        lc.folds = config.folds;
        lc.kprime = config.kprime;
        lc.splits = 1;
        lc.learners = config.learners;
        lc.clip = config.clip;
        lc.normalize_weights = config.normalize_weights;
        lc.seed = run_seed;
        const EstimateReport rep = run_ldml(table, *quantile_moment(config.gamma), lc);
        est = {rep.theta[0], rep.stderr_[0]};
        break;
      }
      case StudyMethod::kIpw:
        est = baseline_ipw(table, config.gamma, config.folds, config.learners, config.clip, run_seed,
                           config.normalize_weights);
        break;
      case StudyMethod::kDmlD:
        est = baseline_dml_d(table, config.gamma, config.folds, config.learners, config.clip,
                             run_seed, config.normalize_weights);
        break;
    }
    thetas.push_back(est.theta);
    ses.push_back(est.standard_error);
  }
  return {median_of(thetas), median_of(ses) + sample_sd(thetas) / std::sqrt(static_cast<double>(runs))};
}

std::vector<ReplicationReport> run_study(const StudyConfig& config) {
  if (config.reps == 0) throw Error(ErrorCode::kZeroReps, "a study needs at least one replication");
  if (config.methods.empty()) throw Error(ErrorCode::kUnknownMethod, "no methods requested");
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "alpha in (0,1)");
  }
  double truth = 0.0;
  if (config.truth) {
    truth = *config.truth;
  } else if (std::abs(config.gamma - kReferenceGamma) < 1e-12) {
    truth = reference_oracle(config.noise).value;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "no frozen oracle for this gamma; supply the truth");
  }
  const double z = normal_quantile(1.0 - config.alpha / 2.0);
  const std::size_t methods = config.methods.size();

  std::vector<ReplicationReport> reports;
  for (std::size_t n : config.n_grid) {
    std::vector<std::vector<MethodEstimate>> cells(config.reps,
                                                   std::vector<MethodEstimate>(methods));
    parallel_for(config.reps, config.threads, [&](std::size_t rep) {
      const ObservationTable table =
          generate_dgp({n, derive_seed(config.seed, {0, n, rep}), config.noise});
      for (std::size_t m = 0; m < methods; ++m) {
        const auto id = static_cast<std::uint64_t>(config.methods[m]);
        cells[rep][m] = run_study_method(table, config.methods[m], config,
                                         derive_seed(config.seed, {1, id, n, rep}));
      }
    });
    for (std::size_t m = 0; m < methods; ++m) {
      ReplicationReport r;
      r.method = std::string(study_method_name(config.methods[m]));
      r.n = n;
      r.reps = config.reps;
      r.truth = truth;
      std::vector<double> sq;
      std::size_t covered = 0;
      for (std::size_t rep = 0; rep < config.reps; ++rep) {
        const MethodEstimate& e = cells[rep][m];
        r.estimates.push_back(e.theta);
        r.standard_errors.push_back(e.standard_error);
        r.lower.push_back(e.theta - z * e.standard_error);
        r.upper.push_back(e.theta + z * e.standard_error);
        if (r.lower.back() <= truth && truth <= r.upper.back()) ++covered;
        sq.push_back((e.theta - truth) * (e.theta - truth));
      }
      const auto reps = static_cast<double>(config.reps);
      r.mse = std::accumulate(sq.begin(), sq.end(), 0.0) / reps;
      r.mse_se = sample_sd(sq) / std::sqrt(reps);
      r.coverage = static_cast<double>(covered) / reps;
      r.coverage_se = std::sqrt(r.coverage * (1.0 - r.coverage) / reps);
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

}  // namespace ldml
