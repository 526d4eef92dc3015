#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pwseg {

enum class ErrorKind {
  config,     // bad config value, unknown key, phantom spec violation
  parameter,  // invalid numeric argument (e.g. kernel variance <= 0)
  io,         // file could not be opened / written
  format,     // malformed file contents
  shape,      // dimension / bounds / shape mismatch
  numeric,    // NaN, non-finite activations, nonpositive sigma
  metric,     // metric undefined for the input (e.g. empty mask)
  annotation, // too few candidate voxels, empty point set
  internal,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::shape: return "shape";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::metric: return "metric";
    case ErrorKind::annotation: return "annotation";
    case ErrorKind::internal: return "internal";
  }
  return "unknown";
}

/// Process exit code for each error class:
/// 0 ok, 2 config, 3 I/O, 4 shape, 5 numeric, 6 annotation/label.
constexpr int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::parameter: return 2;
    case ErrorKind::io:
    case ErrorKind::format: return 3;
    case ErrorKind::shape: return 4;
    case ErrorKind::numeric:
    case ErrorKind::metric: return 5;
    case ErrorKind::annotation: return 6;
    case ErrorKind::internal: return 1;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace pwseg
