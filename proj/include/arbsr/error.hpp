#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace arbsr {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  CorruptSidecar,
  Io,
  NonFinite,
  ConfigConflict,
  VersionMismatch,
  Truncated,
  NotFound,
  OutOfRange,
  Unavailable,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a category so callers (CLI,
// HTTP layer, tests) can branch on it without parsing messages.
class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, std::string const &what);
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, std::string const &what);

} // namespace arbsr
