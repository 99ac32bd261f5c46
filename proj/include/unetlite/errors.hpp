#pragma once

#include <stdexcept>
#include <string>

namespace unetlite {

/// Coarse error categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  usage,        // bad arguments or preconditions (exit 1)
  io,           // file system / data problems (exit 2)
  format,       // malformed container or image bytes (exit 2)
  integrity,    // dataset or stitch plan incomplete (exit 2)
  config,       // invalid architecture / folding / scheme (exit 3)
  shape,        // tensor shape mismatch (exit 3)
  binding,      // weight store does not match the model (exit 3)
  calibration,  // calibration stats missing a site (exit 3)
  numeric,      // non-finite values where finite ones are required (exit 3)
  undefined_metric,  // metric with an empty denominator (exit 2)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Finer-grained subtypes for the container reader so callers can tell the
/// failure modes apart without parsing messages.
enum class FormatFault { bad_magic, truncated, duplicate_name, unknown_dtype, bad_version, bad_header };

class FormatError : public Error {
 public:
  FormatError(FormatFault fault, const std::string& what)
      : Error(ErrorKind::format, what), fault_(fault) {}

  FormatFault fault() const noexcept { return fault_; }

 private:
  FormatFault fault_;
};

int exit_code_for(ErrorKind kind) noexcept;

const char* to_string(ErrorKind kind) noexcept;

}  // namespace unetlite
