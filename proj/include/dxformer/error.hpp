#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dxformer {

enum class ErrorCategory {
  parse,
  invariant,
  vocabulary,
  state,
  config,
  io,
  checkpoint,
  not_found,
  capacity,
};

inline std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::parse: return "parse-error";
    case ErrorCategory::invariant: return "invariant-violation";
    case ErrorCategory::vocabulary: return "unknown-name";
    case ErrorCategory::state: return "invalid-state";
    case ErrorCategory::config: return "config-error";
    case ErrorCategory::io: return "io-error";
    case ErrorCategory::checkpoint: return "checkpoint-error";
    case ErrorCategory::not_found: return "not-found";
    case ErrorCategory::capacity: return "capacity-exceeded";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

}  // namespace dxformer
