#include "ivcm/error.hpp"

namespace ivcm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "ParseError";
    case ErrorCode::kMissingFollowUp: return "MissingFollowUp";
    case ErrorCode::kTimeOutOfRange: return "TimeOutOfRange";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kDuplicateTime: return "DuplicateTime";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyRiskSet: return "EmptyRiskSet";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kSingularHessian: return "SingularHessian";
    case ErrorCode::kNonPositiveBandwidth: return "NonPositiveBandwidth";
    case ErrorCode::kOutOfDomain: return "OutOfDomain";
    case ErrorCode::kDerivativeOrderTooHigh: return "DerivativeOrderTooHigh";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kDegenerateEnsemble: return "DegenerateEnsemble";
    case ErrorCode::kEmptyNeighborhood: return "EmptyNeighborhood";
    case ErrorCode::kNonSymmetricInput: return "NonSymmetricInput";
    case ErrorCode::kRunawayProcess: return "RunawayProcess";
    case ErrorCode::kStudyAborted: return "StudyAborted";
  }
  return "Unknown";
}

}  // namespace ivcm
