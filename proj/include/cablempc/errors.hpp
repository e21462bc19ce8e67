#pragma once

#include <stdexcept>
#include <string>

namespace cablempc {

enum class ErrorCode {
  invalid_argument,
  slack_cable,
  degenerate_attitude,
  geometry_inconsistent,
  ill_conditioned_trajectory,
  solver_failure,
  config,
  parse,
  io,
};

const char* to_string(ErrorCode code);

/// Base exception for every failure raised by the library. The code lets
/// callers branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cablempc
