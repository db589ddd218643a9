#pragma once

#include <stdexcept>
#include <string>

namespace ferm {

enum class ErrorKind {
  shape_mismatch,
  invalid_argument,
  config,
  io,
  bad_magic,
  version_mismatch,
  truncated_file,
  numeric,
  state,
  threshold,
};

class FermError : public std::runtime_error {
 public:
  FermError(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) {
  throw FermError(kind, msg);
}

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::truncated_file: return "truncated_file";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::state: return "state";
    case ErrorKind::threshold: return "threshold";
  }
  return "unknown";
}

}  // namespace ferm
