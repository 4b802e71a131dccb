#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace orchard {

// Error taxonomy shared by the library, the CLI and the HTTP service.
// Verdict-style outcomes (docking results, validation reports) are values,
// not errors; only contract breaches throw.
enum class ErrorCode {
  validation,
  conflict,
  not_found,
  integrity,
  contract,
  source,
  docking,
  cycle,
  storage,
  invalid_transition,
  no_resource,
  insufficient_data,
  undefined_correlation,
  degenerate_fit,
  io,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::contract: return "contract";
    case ErrorCode::source: return "source";
    case ErrorCode::docking: return "docking";
    case ErrorCode::cycle: return "cycle";
    case ErrorCode::storage: return "storage";
    case ErrorCode::invalid_transition: return "invalid_transition";
    case ErrorCode::no_resource: return "no_resource";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::undefined_correlation: return "undefined_correlation";
    case ErrorCode::degenerate_fit: return "degenerate_fit";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }
  const char* code_name() const { return error_code_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace orchard
