#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace latentadv {

enum class ErrorCode {
  shape_mismatch,
  invalid_argument,
  precondition,
  infeasible_init,
  no_feasible_init,
  bad_magic,
  truncated,
  count_mismatch,
  io,
  non_finite,
  tape_consumed,
};

std::string_view to_string(ErrorCode code);

// Every error raised by the library carries a machine-readable code; the CLI
// serializes it into the JSON error document.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace latentadv
