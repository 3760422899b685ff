#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldml/data.hpp"
#include "ldml/gbt.hpp"

namespace ldml {

enum class LearnerKind { kLogistic, kRidge, kGbt, kConstant, kOracle };

std::string_view learner_kind_name(LearnerKind kind);
/// Parses "logistic" | "ridge" | "gbt" | "constant"; "oracle" cannot be named
/// from text because it needs a function. Throws ConfigError.
LearnerKind parse_learner_kind(std::string_view name);

using OracleFn = std::function<double(std::span<const double>)>;

struct ClipRange {
  double lo = 0.01;
  double hi = 0.99;
};

/// Black-box regression recipe used for every functional nuisance.
struct LearnerConfig {
  LearnerKind kind = LearnerKind::kGbt;
  double l2_penalty = 1e-4;  // logistic, ridge
  std::size_t trees = 200;   // gbt
  std::size_t depth = 3;
  double learning_rate = 0.1;
  std::size_t min_leaf = 5;
  double subsample = 1.0;
  std::size_t max_bins = 32;
  OracleFn oracle_fn;  // oracle only

  static LearnerConfig logistic(double l2_penalty = 1e-4);
  static LearnerConfig ridge(double l2_penalty = 1e-4);
  static LearnerConfig gbt(std::size_t trees = 200, std::size_t depth = 3,
                           double learning_rate = 0.1, std::size_t min_leaf = 5);
  static LearnerConfig constant();
  static LearnerConfig oracle(OracleFn fn);

  /// Throws ConfigError when a hyperparameter is out of range or the oracle
  /// function is missing/present for the wrong kind.
  void validate() const;
  GbtParams gbt_params() const;
};

/// Immutable fitted regression function. Cheap to copy (shared state).
class FittedPredictor {
 public:
  struct State;

  FittedPredictor(LearnerKind kind, std::size_t feature_dim, std::shared_ptr<const State> state,
                  std::optional<ClipRange> clip = std::nullopt);

  LearnerKind kind() const { return kind_; }
  std::size_t feature_dim() const { return feature_dim_; }
  const std::optional<ClipRange>& clip_range() const { return clip_; }

  /// Same fitted function, predictions clipped to `clip` (or unclipped).
  FittedPredictor with_clip(std::optional<ClipRange> clip) const;

  double predict_row(std::span<const double> x) const;

  /// Linear models: intercept followed by slopes. Empty for other kinds.
  std::vector<double> coefficients() const;

 private:
  double raw_predict(std::span<const double> x) const;

  LearnerKind kind_;
  std::size_t feature_dim_;
  std::shared_ptr<const State> state_;
  std::optional<ClipRange> clip_;
};

/// Fits `config` to (features, targets). Deterministic for fixed inputs and seed.
/// Errors: EmptyTrainingSet, SingularDesign (ridge, zero penalty, rank
/// deficient), NonBinaryLabels (logistic), DimensionMismatch, NonFiniteValue.
FittedPredictor fit(const LearnerConfig& config, const Matrix& features,
                    std::span<const double> targets, std::uint64_t seed);

/// Fits one model per target vector on shared features; gbt bins the features
/// once for all fits.
std::vector<FittedPredictor> fit_many(const LearnerConfig& config, const Matrix& features,
                                      const std::vector<std::vector<double>>& targets,
                                      std::uint64_t seed);

/// Row-wise predictions, clipped when the model carries a clip range.
/// Errors: DimensionMismatch.
Vector predict(const FittedPredictor& model, const Matrix& features);

}  // namespace ldml
