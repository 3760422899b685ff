#include "ldml/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <variant>

#include "ldml/error.hpp"

namespace ldml {

struct LinearState {
  double intercept = 0.0;
  Eigen::VectorXd slopes;
  bool logistic = false;
};

struct ConstantState {
  double value = 0.0;
};

struct OracleState {
  OracleFn fn;
};

struct FittedPredictor::State {
  std::variant<LinearState, GbtModel, ConstantState, OracleState> model;
};

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void check_training_inputs(const Matrix& features, std::span<const double> targets) {
  if (features.rows() == 0 || targets.empty()) {
    throw Error(ErrorCode::kEmptyTrainingSet, "no training rows");
  }
  if (static_cast<std::size_t>(features.rows()) != targets.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "feature rows vs targets");
  }
  for (double v : targets) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteValue, "training target");
  }
}

// Penalized IRLS: minimizes mean log-loss + (l2/2)||w||^2 with an unpenalized
// intercept. Stops at gradient norm <= 1e-8 or 100 Newton steps.
LinearState fit_logistic(const Matrix& x, std::span<const double> y, double l2) {
  const Eigen::Index m = x.rows();
  const Eigen::Index p = x.cols();
  Eigen::MatrixXd z(m, p + 1);
  z.col(0).setOnes();
  if (p > 0) z.rightCols(p) = x;
  const Eigen::Map<const Eigen::VectorXd> target(y.data(), m);

  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p + 1, l2);
  penalty(0) = 0.0;
  const double base = std::clamp(target.mean(), 1e-6, 1.0 - 1e-6);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  beta(0) = std::log(base / (1.0 - base));

  auto objective = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = z * b;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) loss += softplus(eta(i)) - target(i) * eta(i);
    return loss / static_cast<double>(m) + 0.5 * (penalty.array() * b.array().square()).sum();
  };

  double current = objective(beta);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd eta = z * beta;
    Eigen::VectorXd mu(m), w(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      mu(i) = sigmoid(eta(i));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    const Eigen::VectorXd grad =
        z.transpose() * (mu - target) / static_cast<double>(m) + penalty.cwiseProduct(beta);
    if (grad.norm() <= 1e-8) break;

    Eigen::MatrixXd hess = z.transpose() * w.asDiagonal() * z / static_cast<double>(m);
    hess.diagonal() += penalty;
    hess(0, 0) += 1e-12;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    double t = 1.0;
    Eigen::VectorXd candidate = beta - step;
    double value = objective(candidate);
    while (!(value <= current) && t > 1e-10) {
      t *= 0.5;
      candidate = beta - t * step;
      value = objective(candidate);
    }
    if (!(value <= current)) break;
    beta = candidate;
    current = value;
  }
  return {beta(0), beta.tail(p), true};
}

// Minimizes mean squared error + l2 ||w||^2 with an unpenalized intercept.
LinearState fit_ridge(const Matrix& x, std::span<const double> y, double l2) {
  const Eigen::Index m = x.rows();
  const Eigen::Index p = x.cols();
  const Eigen::Map<const Eigen::VectorXd> target(y.data(), m);
  const double y_mean = target.mean();
  if (p == 0) return {y_mean, Eigen::VectorXd(), false};

  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = target.array() - y_mean;

  Eigen::VectorXd slopes;
  if (l2 == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
    if (qr.rank() < p) {
      throw Error(ErrorCode::kSingularDesign,
                  "rank " + std::to_string(qr.rank()) + " < " + std::to_string(p) +
                      " with zero penalty");
    }
    slopes = qr.solve(yc);
  } else {
    Eigen::MatrixXd gram = xc.transpose() * xc / static_cast<double>(m);
    gram.diagonal().array() += l2;
    slopes = gram.ldlt().solve(xc.transpose() * yc / static_cast<double>(m));
  }
  return {y_mean - x_mean.dot(slopes), slopes, false};
}

}  // namespace

std::string_view learner_kind_name(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::kLogistic: return "logistic";
    case LearnerKind::kRidge: return "ridge";
    case LearnerKind::kGbt: return "gbt";
    case LearnerKind::kConstant: return "constant";
    case LearnerKind::kOracle: return "oracle";
  }
  return "unknown";
}

LearnerKind parse_learner_kind(std::string_view name) {
  if (name == "logistic") return LearnerKind::kLogistic;
  if (name == "ridge") return LearnerKind::kRidge;
  if (name == "gbt") return LearnerKind::kGbt;
  if (name == "constant") return LearnerKind::kConstant;
  throw Error(ErrorCode::kConfigError, "unknown learner '" + std::string(name) + "'");
}

LearnerConfig LearnerConfig::logistic(double l2_penalty) {
  LearnerConfig c;
  c.kind = LearnerKind::kLogistic;
  c.l2_penalty = l2_penalty;
  return c;
}

LearnerConfig LearnerConfig::ridge(double l2_penalty) {
  LearnerConfig c;
  c.kind = LearnerKind::kRidge;
  c.l2_penalty = l2_penalty;
  return c;
}

LearnerConfig LearnerConfig::gbt(std::size_t trees, std::size_t depth, double learning_rate,
                                 std::size_t min_leaf) {
  LearnerConfig c;
  c.kind = LearnerKind::kGbt;
  c.trees = trees;
  c.depth = depth;
  c.learning_rate = learning_rate;
  c.min_leaf = min_leaf;
  return c;
}

LearnerConfig LearnerConfig::constant() {
  LearnerConfig c;
  c.kind = LearnerKind::kConstant;
  return c;
}

LearnerConfig LearnerConfig::oracle(OracleFn fn) {
  LearnerConfig c;
  c.kind = LearnerKind::kOracle;
  c.oracle_fn = std::move(fn);
  return c;
}

void LearnerConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kConfigError, what); };
  if (!(l2_penalty >= 0.0) || !std::isfinite(l2_penalty)) bad("l2_penalty must be >= 0");
  if (kind == LearnerKind::kGbt) {
    if (depth < 1) bad("gbt depth must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) bad("gbt learning_rate must be in (0,1]");
    if (min_leaf < 1) bad("gbt min_leaf must be >= 1");
    if (!(subsample > 0.0 && subsample <= 1.0)) bad("gbt subsample must be in (0,1]");
    if (max_bins < 2 || max_bins > 256) bad("gbt max_bins must be in [2,256]");
  }
  if ((kind == LearnerKind::kOracle) != static_cast<bool>(oracle_fn)) {
    bad("oracle_fn must be set exactly when kind=oracle");
  }
}

GbtParams LearnerConfig::gbt_params() const {
  return {trees, depth, learning_rate, min_leaf, subsample, max_bins};
}

FittedPredictor::FittedPredictor(LearnerKind kind, std::size_t feature_dim,
                                 std::shared_ptr<const State> state, std::optional<ClipRange> clip)
    : kind_(kind), feature_dim_(feature_dim), state_(std::move(state)), clip_(clip) {}

FittedPredictor FittedPredictor::with_clip(std::optional<ClipRange> clip) const {
  return FittedPredictor(kind_, feature_dim_, state_, clip);
}

double FittedPredictor::raw_predict(std::span<const double> x) const {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearState>) {
          double eta = m.intercept;
          for (Eigen::Index j = 0; j < m.slopes.size(); ++j) {
            eta += m.slopes(j) * x[static_cast<std::size_t>(j)];
          }
          return m.logistic ? sigmoid(eta) : eta;
        } else if constexpr (std::is_same_v<T, GbtModel>) {
          return m.predict_row(x);
        } else if constexpr (std::is_same_v<T, ConstantState>) {
          return m.value;
        } else {
          return m.fn(x);
        }
      },
      state_->model);
}

double FittedPredictor::predict_row(std::span<const double> x) const {
  if (x.size() != feature_dim_) {
    throw Error(ErrorCode::kDimensionMismatch, "expected " + std::to_string(feature_dim_) +
                                                   " features, got " + std::to_string(x.size()));
  }
  double v = raw_predict(x);
  if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteValue, "prediction");
  if (clip_) v = std::clamp(v, clip_->lo, clip_->hi);
  return v;
}

std::vector<double> FittedPredictor::coefficients() const {
  if (const auto* lin = std::get_if<LinearState>(&state_->model)) {
    std::vector<double> out{lin->intercept};
    out.insert(out.end(), lin->slopes.data(), lin->slopes.data() + lin->slopes.size());
    return out;
  }
  return {};
}

FittedPredictor fit(const LearnerConfig& config, const Matrix& features,
                    std::span<const double> targets, std::uint64_t seed) {
  config.validate();
  check_training_inputs(features, targets);
  const auto p = static_cast<std::size_t>(features.cols());
  auto state = std::make_shared<FittedPredictor::State>();
  switch (config.kind) {
    case LearnerKind::kLogistic:
      for (double v : targets) {
        if (v != 0.0 && v != 1.0) throw Error(ErrorCode::kNonBinaryLabels, "logistic labels must be 0/1");
      }
      state->model = fit_logistic(features, targets, config.l2_penalty);
      break;
    case LearnerKind::kRidge:
      state->model = fit_ridge(features, targets, config.l2_penalty);
      break;
    case LearnerKind::kGbt:
      state->model = fit_gbt(FeatureBins(features, config.max_bins), targets, config.gbt_params(), seed);
      break;
    case LearnerKind::kConstant:
      state->model = ConstantState{std::accumulate(targets.begin(), targets.end(), 0.0) /
                                   static_cast<double>(targets.size())};
      break;
    case LearnerKind::kOracle:
      state->model = OracleState{config.oracle_fn};
      break;
  }
  return FittedPredictor(config.kind, p, std::move(state));
}

std::vector<FittedPredictor> fit_many(const LearnerConfig& config, const Matrix& features,
                                      const std::vector<std::vector<double>>& targets,
                                      std::uint64_t seed) {
  std::vector<FittedPredictor> out;
  out.reserve(targets.size());
  if (config.kind != LearnerKind::kGbt) {
    for (const auto& t : targets) out.push_back(fit(config, features, t, seed));
    return out;
  }
  config.validate();
  if (features.rows() == 0) throw Error(ErrorCode::kEmptyTrainingSet, "no training rows");
  const FeatureBins bins(features, config.max_bins);
  for (const auto& t : targets) {
    check_training_inputs(features, t);
    auto state = std::make_shared<FittedPredictor::State>();
    state->model = fit_gbt(bins, t, config.gbt_params(), seed);
    out.emplace_back(LearnerKind::kGbt, static_cast<std::size_t>(features.cols()), std::move(state));
  }
  return out;
}

Vector predict(const FittedPredictor& model, const Matrix& features) {
  if (static_cast<std::size_t>(features.cols()) != model.feature_dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected " + std::to_string(model.feature_dim()) + " features, got " +
                    std::to_string(features.cols()));
  }
  Vector out(features.rows());
  const auto p = static_cast<std::size_t>(features.cols());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out(i) = model.predict_row({features.data() + static_cast<std::size_t>(i) * p, p});
  }
  return out;
}

}  // namespace ldml
