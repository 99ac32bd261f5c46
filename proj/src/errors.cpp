#include "unetlite/errors.hpp"

namespace unetlite {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage:
      return 1;
    case ErrorKind::io:
    case ErrorKind::format:
    case ErrorKind::integrity:
    case ErrorKind::undefined_metric:
      return 2;
    case ErrorKind::config:
    case ErrorKind::shape:
    case ErrorKind::binding:
    case ErrorKind::calibration:
    case ErrorKind::numeric:
      return 3;
  }
  return 1;
}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::usage: return "usage error";
    case ErrorKind::io: return "io error";
    case ErrorKind::format: return "format error";
    case ErrorKind::integrity: return "integrity error";
    case ErrorKind::config: return "config error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::binding: return "binding error";
    case ErrorKind::calibration: return "calibration error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::undefined_metric: return "undefined metric";
  }
  return "error";
}

}  // namespace unetlite
