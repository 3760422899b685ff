#include "ldml/error.hpp"

namespace ldml {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingColumn: return "MissingColumn";
    case ErrorCode::kNonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kMalformedValue: return "MalformedValue";
    case ErrorCode::kEmptyFile: return "EmptyFile";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kInvalidKPrime: return "InvalidKPrime";
    case ErrorCode::kTooFewRows: return "TooFewRows";
    case ErrorCode::kEmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::kSingularDesign: return "SingularDesign";
    case ErrorCode::kNonBinaryLabels: return "NonBinaryLabels";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kMissingInstrument: return "MissingInstrument";
    case ErrorCode::kDegenerateTreatmentArm: return "DegenerateTreatmentArm";
    case ErrorCode::kKPrimeTooSmall: return "KPrimeTooSmall";
    case ErrorCode::kNuTooSmall: return "NuTooSmall";
    case ErrorCode::kEmptySubsample: return "EmptySubsample";
    case ErrorCode::kEmptyPoints: return "EmptyPoints";
    case ErrorCode::kSolverNoCandidate: return "SolverNoCandidate";
    case ErrorCode::kNoContributingRows: return "NoContributingRows";
    case ErrorCode::kNonPositiveBandwidth: return "NonPositiveBandwidth";
    case ErrorCode::kSingularJacobian: return "SingularJacobian";
    case ErrorCode::kFoldPlanMismatch: return "FoldPlanMismatch";
    case ErrorCode::kUnknownMethod: return "UnknownMethod";
    case ErrorCode::kZeroReps: return "ZeroReps";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_name(code)) + ": " + message),
      code_(code) {}

}  // namespace ldml
