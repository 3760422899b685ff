#include "ldml/inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "ldml/error.hpp"
#include "ldml/normal.hpp"
#include "ldml/random.hpp"

namespace ldml {
namespace {

// Linear-interpolation sample quantile of sorted values.
double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t h = values.size() / 2;
  return values.size() % 2 ? values[h] : 0.5 * (values[h - 1] + values[h]);
}

Matrix scalar_matrix(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return m;
}

double ipw_cdf(const ObservationTable& table, std::span<const double> propensity, double theta1) {
  double below = 0.0, total = 0.0;
  for (std::size_t i = 0; i < table.n(); ++i) {
    if (table.treatment(i) != 1) continue;
    const double w = 1.0 / propensity[i];
    total += w;
    if (table.outcome(i) <= theta1) below += w;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kNoContributingRows, "no treated rows for the CDF");
  return below / total;
}

}  // namespace

double rule_of_thumb_bandwidth(std::span<const double> values) {
  const std::size_t m = values.size();
  if (m == 0) throw Error(ErrorCode::kNoContributingRows, "bandwidth rule needs data");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(m);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) : 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = sorted_quantile(sorted, 0.75) - sorted_quantile(sorted, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  const double h = 0.9 * spread * std::pow(static_cast<double>(m), -0.2);
  if (!(h > 0.0)) {
    throw Error(ErrorCode::kNonPositiveBandwidth, "outcomes have no spread for the bandwidth rule");
  }
  return h;
}

JacobianEstimate estimate_jacobian_kde(const ObservationTable& table,
                                       std::span<const double> propensity, double theta1,
                                       KdeMode mode, const KdeOptions& options, double nu) {
  if (propensity.size() != table.n()) {
    throw Error(ErrorCode::kDimensionMismatch, "one propensity per row is required");
  }
  if (mode == KdeMode::kLqteSigned && !table.has_instrument()) {
    throw Error(ErrorCode::kMissingInstrument, "signed kernel Jacobian needs an instrument");
  }
  std::vector<double> outcomes, weights;
  for (std::size_t i = 0; i < table.n(); ++i) {
    if (table.treatment(i) != 1) continue;
    const double p = propensity[i];
    double w = 0.0;
    if (mode == KdeMode::kTreated) {
      w = 1.0 / p;
    } else {
      w = (table.instrument(i) - p) / (p * (1.0 - p));
    }
    outcomes.push_back(table.outcome(i));
    weights.push_back(w);
  }
  if (outcomes.empty()) throw Error(ErrorCode::kNoContributingRows, "no treated rows");
  double h = 0.0;
  if (options.bandwidth) {
    h = *options.bandwidth;
    if (!(h > 0.0)) throw Error(ErrorCode::kNonPositiveBandwidth, "bandwidth must be positive");
  } else {
    h = rule_of_thumb_bandwidth(outcomes);
  }
  const double scale = mode == KdeMode::kLqteSigned ? nu : 1.0;
  const auto n = static_cast<double>(table.n());
  double density = 0.0, mass = 0.0;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    density += weights[r] * normal_pdf((outcomes[r] - theta1) / h);
    mass += weights[r];
  }
  density /= scale * n * h;
  mass /= scale * n;
  if (options.self_normalize) {
    if (!(mass > 0.0)) {
      throw Error(ErrorCode::kNoContributingRows, "kernel weights have no positive mass");
    }
    density /= mass;
  }
  const JacobianMethod method =
      mode == KdeMode::kTreated ? JacobianMethod::kKdeQuantile : JacobianMethod::kKdeLqte;
  return {scalar_matrix(density), method, h};
}

JacobianEstimate estimate_jacobian_analytic(const MomentModel& moment,
                                            const ObservationTable& table,
                                            std::span<const double> propensity,
                                            std::span<const double> theta,
                                            const KdeOptions& options) {
  switch (moment.jacobian_method()) {
    case JacobianMethod::kQcvarBlock: {
      const JacobianEstimate kde =
          estimate_jacobian_kde(table, propensity, theta[0], KdeMode::kTreated, options);
      Matrix block = Matrix::Zero(2, 2);
      block(0, 0) = kde.matrix(0, 0);
      block(1, 1) = -1.0;
      return {block, JacobianMethod::kQcvarBlock, kde.bandwidth};
    }
    case JacobianMethod::kExpectileCdf: {
      const double g = moment.gamma();
      const double cdf = ipw_cdf(table, propensity, theta[0]);
      return {scalar_matrix(-g - (1.0 - 2.0 * g) * cdf), JacobianMethod::kExpectileCdf,
              std::nullopt};
    }
    default:
      throw Error(ErrorCode::kInvalidArgument,
                  "no closed-form Jacobian for estimand '" + moment.name() + "'");
  }
}

JacobianEstimate estimate_jacobian(const MomentModel& moment, const ObservationTable& table,
                                   std::span<const double> propensity,
                                   std::span<const double> theta, const KdeOptions& options,
                                   double nu) {
  switch (moment.jacobian_method()) {
    case JacobianMethod::kKdeQuantile:
      return estimate_jacobian_kde(table, propensity, theta[0], KdeMode::kTreated, options);
    case JacobianMethod::kKdeLqte:
      return estimate_jacobian_kde(table, propensity, theta[0], KdeMode::kLqteSigned, options, nu);
    default:
      return estimate_jacobian_analytic(moment, table, propensity, theta, options);
  }
}

bool repair_psd(Matrix& sigma) {
  const Matrix sym = 0.5 * (sigma + sigma.transpose());
  sigma = sym;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd values = eig.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, values.cwiseAbs().maxCoeff());
  if (values.minCoeff() >= -tol) return false;
  const Eigen::VectorXd floored = values.cwiseMax(0.0);
  sigma = eig.eigenvectors() * floored.asDiagonal() * eig.eigenvectors().transpose();
  return true;
}

VarianceEstimate variance_from_influence(const Matrix& influence) {
  if (influence.rows() == 0) throw Error(ErrorCode::kNoContributingRows, "no influence rows");
  VarianceEstimate out;
  out.n = static_cast<std::size_t>(influence.rows());
  out.sigma = (influence.transpose() * influence) / static_cast<double>(influence.rows());
  out.repaired = repair_psd(out.sigma);
  out.influence = influence;
  return out;
}

VarianceEstimate estimate_variance(const Matrix& psi_rows, const JacobianEstimate& jacobian) {
  const Eigen::MatrixXd j = jacobian.matrix;
  if (j.rows() != j.cols() || j.cols() != psi_rows.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "Jacobian and psi dimensions differ");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(j);
  const double smallest = svd.singularValues().minCoeff();
  if (!std::isfinite(smallest) || smallest <= 1e-10) {
    throw Error(ErrorCode::kSingularJacobian,
                "Jacobian smallest singular value " + std::to_string(smallest));
  }
  const Eigen::MatrixXd inverse = j.inverse();
  const Matrix influence = psi_rows * inverse.transpose();
  VarianceEstimate out = variance_from_influence(influence);
  out.jacobian = jacobian;
  return out;
}

ConfidenceInterval confidence_interval(std::span<const double> theta,
                                       const VarianceEstimate& variance,
                                       std::span<const double> contrast, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha in (0,1)");
  const auto d = static_cast<Eigen::Index>(theta.size());
  if (contrast.size() != theta.size() || variance.sigma.rows() != d || variance.n == 0) {
    throw Error(ErrorCode::kDimensionMismatch, "contrast, theta and sigma must agree");
  }
  const Eigen::Map<const Eigen::VectorXd> z(contrast.data(), d);
  const Eigen::Map<const Eigen::VectorXd> t(theta.data(), d);
  const double estimate = z.dot(t);
  const double quad = z.dot(variance.sigma * z);
  const double half = normal_quantile(1.0 - alpha / 2.0) *
                      std::sqrt(std::max(quad, 0.0) / static_cast<double>(variance.n));
  return {std::vector<double>(contrast.begin(), contrast.end()), alpha, estimate, estimate - half,
          estimate + half};
}

double nu_contribution(int instrument, int treatment, double instrument_propensity,
                       double treatment_fitted, double treatment_if_on, double treatment_if_off) {
  const double p = instrument_propensity;
  return (instrument - p) / (p * (1.0 - p)) * (treatment - treatment_fitted) + treatment_if_on -
         treatment_if_off;
}

double estimate_nu_dml(const ObservationTable& table, const FoldPlan& plan,
                       const LearnerConfig& instrument_learner,
                       const LearnerConfig& treatment_learner, ClipRange clip,
                       std::uint64_t seed) {
  if (!table.has_instrument()) {
    throw Error(ErrorCode::kMissingInstrument, "complier share needs an instrument column");
  }
  if (plan.n() != table.n()) throw Error(ErrorCode::kFoldPlanMismatch, "plan size differs");
  const std::size_t p = table.p();
  auto with_instrument = [&](std::size_t i, double w, std::vector<double>& buf) {
    const auto x = table.row(i);
    std::copy(x.begin(), x.end(), buf.begin());
    buf[p] = w;
  };

  double total = 0.0;
  std::vector<double> buf(p + 1);
  for (std::size_t k = 0; k < plan.folds(); ++k) {
    const auto train = plan.rows_outside(k);
    std::vector<double> w_labels(train.size()), t_labels(train.size());
    Matrix xw(static_cast<Eigen::Index>(train.size()), static_cast<Eigen::Index>(p + 1));
    for (std::size_t r = 0; r < train.size(); ++r) {
      const std::size_t i = train[r];
      w_labels[r] = table.instrument(i);
      t_labels[r] = table.treatment(i);
      with_instrument(i, table.instrument(i), buf);
      for (std::size_t c = 0; c <= p; ++c) xw(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = buf[c];
    }
    if (std::all_of(w_labels.begin(), w_labels.end(),
                    [&](double v) { return v == w_labels.front(); })) {
      throw Error(ErrorCode::kDegenerateTreatmentArm,
                  "instrument takes one value outside fold " + std::to_string(k));
    }
    FittedPredictor inst = fit(instrument_learner, table.select_covariates(train), w_labels,
                               derive_seed(seed, {k, 0}));
    if (inst.kind() != LearnerKind::kOracle) inst = inst.with_clip(clip);
    const FittedPredictor treat = fit(treatment_learner, xw, t_labels, derive_seed(seed, {k, 1}));
    for (std::size_t i : plan.fold_rows(k)) {
      const double pw = inst.predict_row(table.row(i));
      with_instrument(i, table.instrument(i), buf);
      const double fitted = treat.predict_row(buf);
      with_instrument(i, 1.0, buf);
      const double on = treat.predict_row(buf);
      with_instrument(i, 0.0, buf);
      const double off = treat.predict_row(buf);
      total += nu_contribution(table.instrument(i), table.treatment(i), pw, fitted, on, off);
    }
  }
  const double nu = total / static_cast<double>(table.n());
  if (!(nu >= kMinNu)) {
    throw Error(ErrorCode::kNuTooSmall,
                "estimated complier share " + std::to_string(nu) + " is below 0.01");
  }
  return nu;
}

AggregateResult aggregate_splits(const std::vector<std::vector<double>>& thetas,
                                 const std::vector<Matrix>& sigmas, AggregateRule rule,
                                 double spread_scale) {
  if (thetas.empty() || thetas.size() != sigmas.size()) {
    throw Error(ErrorCode::kInvalidArgument, "aggregation needs one sigma per theta");
  }
  const std::size_t s_count = thetas.size();
  const std::size_t d = thetas.front().size();
  const double s = static_cast<double>(s_count);
  AggregateResult out;
  out.theta.assign(d, 0.0);
  std::vector<double> column(s_count);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t r = 0; r < s_count; ++r) column[r] = thetas[r][j];
    if (rule == AggregateRule::kMean) {
      for (double v : column) out.theta[j] += v / s;
    } else {
      out.theta[j] = median(column);
    }
  }
  std::vector<Matrix> terms;
  for (std::size_t r = 0; r < s_count; ++r) {
    Eigen::VectorXd dev(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) dev(static_cast<Eigen::Index>(j)) = thetas[r][j] - out.theta[j];
    terms.push_back(sigmas[r] + (spread_scale / s) * (dev * dev.transpose()));
  }
  if (rule == AggregateRule::kMean) {
    out.sigma = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (const auto& t : terms) out.sigma += t / s;
  } else {
    out.sigma = terms.front();
    for (Eigen::Index a = 0; a < out.sigma.rows(); ++a) {
      for (Eigen::Index b = 0; b < out.sigma.cols(); ++b) {
        for (std::size_t r = 0; r < s_count; ++r) column[r] = terms[r](a, b);
        out.sigma(a, b) = median(column);
      }
    }
  }
  out.repaired = repair_psd(out.sigma);
  return out;
}

}  // namespace ldml
