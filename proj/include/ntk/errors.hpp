#pragma once

#include <stdexcept>
#include <string>

namespace ntk {

// Error taxonomy. `user` errors come from bad inputs/configs (CLI exit 2),
// `numeric` errors from failed numerical procedures (CLI exit 3).
enum class ErrorCode {
  // program construction / validation
  UseBeforeDef,
  ArityMismatch,
  NonPsdInputCovariance,
  UnknownNonlin,
  // expectation engine
  SingularVTransform,
  NonPsdCovariance,
  MethodUnavailable,
  // limit evaluator
  BpLikeViolation,
  ExpectationFailure,
  NonPsdBlock,
  DegenerateVariance,
  // finite interpreter
  NumericOverflow,
  LengthMismatch,
  // frontends
  EmptySequence,
  AsymmetricKernelOffsets,
  UncoveredMatMul,
  // batchnorm kernel integrals
  SingularBatch,
  QuadratureNoConvergence,
  JacobianIllConditioned,
  // I/O and config
  BadConfig,
  IoFailure,
};

const char* error_code_name(ErrorCode c);
bool error_is_numeric(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace ntk
