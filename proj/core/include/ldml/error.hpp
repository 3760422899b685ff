#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ldml {

enum class ErrorCode {
  // data model
  kMissingColumn,
  kNonBinaryTreatment,
  kNonFiniteValue,
  kMalformedValue,
  kEmptyFile,
  kIoError,
  kInvalidKPrime,
  kTooFewRows,
  // learners
  kEmptyTrainingSet,
  kSingularDesign,
  kNonBinaryLabels,
  kDimensionMismatch,
  // estimands / engine
  kMissingInstrument,
  kDegenerateTreatmentArm,
  kKPrimeTooSmall,
  kNuTooSmall,
  kEmptySubsample,
  kEmptyPoints,
  kSolverNoCandidate,
  // inference
  kNoContributingRows,
  kNonPositiveBandwidth,
  kSingularJacobian,
  kFoldPlanMismatch,
  // simlab
  kUnknownMethod,
  kZeroReps,
  // generic
  kInvalidArgument,
  kConfigError,
};

/// Stable machine-readable name, e.g. "NonBinaryTreatment".
std::string_view error_name(ErrorCode code);

/// Every failure in the library is reported as an ldml::Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ldml
