#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vqalab {

/// Failure categories surfaced to callers and, through the CLI, as the
/// `kind` field of the machine-readable error object.
enum class ErrorKind {
  shape,
  unbound_input,
  rank,
  config,
  vocabulary,
  alignment,
  empty_input,
  io,
  numeric,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::unbound_input: return "unbound_input";
    case ErrorKind::rank: return "rank";
    case ErrorKind::config: return "config";
    case ErrorKind::vocabulary: return "vocabulary";
    case ErrorKind::alignment: return "alignment";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::io: return "io";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace vqalab
