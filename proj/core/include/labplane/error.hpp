#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace labplane {

enum class ErrorCode {
  kNotFound,
  kAlreadyExists,
  kInvalidArgument,
  kFailedPrecondition,
  kIllegalTransition,
  kPermissionDenied,
  kUnschedulable,
  kUndefinedMetric,
  kDataLoss,
};

/// Machine-readable name of an error code ("not_found", "illegal_transition", ...).
std::string_view to_string(ErrorCode code) noexcept;

/// Every failed operation in the control plane throws this.
///
/// `field()` names the offending input when one can be singled out; the HTTP
/// layer maps the triple (code, message, field) onto its uniform error body.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string field = {})
      : std::runtime_error(std::move(message)), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

}  // namespace labplane
