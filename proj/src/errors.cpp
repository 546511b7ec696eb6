#include "ntk/errors.hpp"

namespace ntk {

const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::UseBeforeDef: return "UseBeforeDef";
    case ErrorCode::ArityMismatch: return "ArityMismatch";
    case ErrorCode::NonPsdInputCovariance: return "NonPsdInputCovariance";
    case ErrorCode::UnknownNonlin: return "UnknownNonlin";
    case ErrorCode::SingularVTransform: return "SingularVTransform";
    case ErrorCode::NonPsdCovariance: return "NonPsdCovariance";
    case ErrorCode::MethodUnavailable: return "MethodUnavailable";
    case ErrorCode::BpLikeViolation: return "BpLikeViolation";
    case ErrorCode::ExpectationFailure: return "ExpectationFailure";
    case ErrorCode::NonPsdBlock: return "NonPsdBlock";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::NumericOverflow: return "NumericOverflow";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::AsymmetricKernelOffsets: return "AsymmetricKernelOffsets";
    case ErrorCode::UncoveredMatMul: return "UncoveredMatMul";
    case ErrorCode::SingularBatch: return "SingularBatch";
    case ErrorCode::QuadratureNoConvergence: return "QuadratureNoConvergence";
    case ErrorCode::JacobianIllConditioned: return "JacobianIllConditioned";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "UnknownError";
}

bool error_is_numeric(ErrorCode c) {
  switch (c) {
    case ErrorCode::SingularVTransform:
    case ErrorCode::NonPsdCovariance:
    case ErrorCode::MethodUnavailable:
    case ErrorCode::ExpectationFailure:
    case ErrorCode::NonPsdBlock:
    case ErrorCode::DegenerateVariance:
    case ErrorCode::NumericOverflow:
    case ErrorCode::SingularBatch:
    case ErrorCode::QuadratureNoConvergence:
    case ErrorCode::JacobianIllConditioned:
      return true;
    default:
      return false;
  }
}

}  // namespace ntk
