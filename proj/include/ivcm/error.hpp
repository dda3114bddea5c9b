#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace ivcm {

enum class ErrorCode {
  kParse,
  kMissingFollowUp,
  kTimeOutOfRange,
  kNonFiniteValue,
  kDuplicateTime,
  kInvalidArgument,
  kDimensionMismatch,
  kEmptyRiskSet,
  kNoConvergence,
  kSingularHessian,
  kNonPositiveBandwidth,
  kOutOfDomain,
  kDerivativeOrderTooHigh,
  kSingularSystem,
  kDegenerateEnsemble,
  kEmptyNeighborhood,
  kNonSymmetricInput,
  kRunawayProcess,
  kStudyAborted,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by fit_gamma when Newton-Raphson stops without meeting the gradient
// tolerance; carries the last iterate for diagnostics.
class NoConvergenceError : public Error {
 public:
  NoConvergenceError(const std::string& what, Eigen::VectorXd last_iterate, int iterations)
      : Error(ErrorCode::kNoConvergence, what),
        last_iterate_(std::move(last_iterate)),
        iterations_(iterations) {}

  const Eigen::VectorXd& last_iterate() const noexcept { return last_iterate_; }
  int iterations() const noexcept { return iterations_; }

 private:
  Eigen::VectorXd last_iterate_;
  int iterations_;
};

}  // namespace ivcm
