#include "arbsr/error.hpp"

namespace arbsr {

std::string_view to_string(ErrorKind kind)
{
  switch (kind) {
  case ErrorKind::InvalidArgument: return "invalid-argument";
  case ErrorKind::DimensionMismatch: return "dimension-mismatch";
  case ErrorKind::CorruptSidecar: return "corrupt-sidecar";
  case ErrorKind::Io: return "io";
  case ErrorKind::NonFinite: return "non-finite";
  case ErrorKind::ConfigConflict: return "config-conflict";
  case ErrorKind::VersionMismatch: return "version-mismatch";
  case ErrorKind::Truncated: return "truncated";
  case ErrorKind::NotFound: return "not-found";
  case ErrorKind::OutOfRange: return "out-of-range";
  case ErrorKind::Unavailable: return "unavailable";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, std::string const &what)
  : std::runtime_error(std::string(to_string(kind)) + ": " + what)
  , kind_{kind}
{
}

void fail(ErrorKind kind, std::string const &what) { throw Error(kind, what); }

} // namespace arbsr
