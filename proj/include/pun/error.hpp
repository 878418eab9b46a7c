#pragma once

#include <stdexcept>
#include <string>

namespace pun {

enum class ErrorKind {
  kInvalidArgument,
  kFormat,
  kIo,
  kVersion,
  kUnsupportedKind,
  kNotFound,
  kEmptyHull,
  kPeer,
  kProtocol,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kFormat: return "format-error";
    case ErrorKind::kIo: return "io-error";
    case ErrorKind::kVersion: return "version-error";
    case ErrorKind::kUnsupportedKind: return "unsupported-kind";
    case ErrorKind::kNotFound: return "not-found";
    case ErrorKind::kEmptyHull: return "empty-hull";
    case ErrorKind::kPeer: return "peer-error";
    case ErrorKind::kProtocol: return "protocol-error";
  }
  return "error";
}

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorKind::kInvalidArgument, message);
}

}  // namespace pun
