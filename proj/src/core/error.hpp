#pragma once

#include <stdexcept>
#include <string>

namespace kafshot {

enum class ErrorKind {
  dimension,
  parameter,
  numeric,
  format,
  sampling,
  state,
  metric,
  training,
  config,
  io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries one of the kinds above so the
/// C boundary can map it to a status code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised when a training loss becomes non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, const std::string& what)
      : Error(ErrorKind::training, what), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace kafshot
