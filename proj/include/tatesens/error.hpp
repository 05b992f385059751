#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tatesens {

// Every failure raised by the library carries one category. The CLI maps
// each category to exactly one exit code (see exit_code()).
enum class ErrorCategory {
  kUsage,        // bad flags or config structure
  kIo,           // unreadable / unwritable files
  kValidation,   // data or role validation
  kCoverage,     // effect-modifier support violated
  kFit,          // numerical fitting failed
  kUnobservedModifier,
  kSimulation,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string_view module, const std::string& what)
      : std::runtime_error("[" + std::string(module) + "] " + what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

inline Error usage_error(const std::string& what) {
  return Error(ErrorCategory::kUsage, "cli", what);
}
inline Error io_error(const std::string& what) {
  return Error(ErrorCategory::kIo, "io", what);
}
inline Error validation_error(const std::string& what) {
  return Error(ErrorCategory::kValidation, "core-data", what);
}
inline Error coverage_error(const std::string& what) {
  return Error(ErrorCategory::kCoverage, "coverage", what);
}
inline Error fit_error(const std::string& what) {
  return Error(ErrorCategory::kFit, "estimation", what);
}
inline Error simulation_error(const std::string& what) {
  return Error(ErrorCategory::kSimulation, "simulation", what);
}

/// Process exit code for an error category. 0 is success and 1 is reserved
/// for unexpected internal failures.
constexpr int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::kUsage: return 2;
    case ErrorCategory::kIo: return 3;
    case ErrorCategory::kValidation: return 4;
    case ErrorCategory::kCoverage: return 5;
    case ErrorCategory::kFit: return 6;
    case ErrorCategory::kUnobservedModifier: return 7;
    case ErrorCategory::kSimulation: return 8;
  }
  return 1;
}

}  // namespace tatesens
