#include "labplane/error.hpp"

namespace labplane {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kAlreadyExists: return "already_exists";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kFailedPrecondition: return "failed_precondition";
    case ErrorCode::kIllegalTransition: return "illegal_transition";
    case ErrorCode::kPermissionDenied: return "permission_denied";
    case ErrorCode::kUnschedulable: return "unschedulable";
    case ErrorCode::kUndefinedMetric: return "undefined_metric";
    case ErrorCode::kDataLoss: return "data_loss";
  }
  return "unknown";
}

}  // namespace labplane
