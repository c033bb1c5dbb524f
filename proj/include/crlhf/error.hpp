#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crlhf {

enum class ErrorKind {
  shape,       // dimension mismatch between inputs
  domain,      // parameter outside its admissible range
  support,     // reference policy lacks support where it is needed
  validation,  // data violates a type invariant
  numerical,   // iteration failed to converge or bracket a root
  infeasible,  // Slater slack could not be certified / no feasible point
  parse,       // malformed input file
  io,          // file system failure
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace crlhf
