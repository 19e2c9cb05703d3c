#pragma once

#include <stdexcept>
#include <string>

namespace emb {

/// Error raised by every component. The kind drives the CLI's
/// machine-readable error report.
class Error : public std::runtime_error {
 public:
  enum class Kind { shape, numeric, validation, io, config };

  Error(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  const char* kind_name() const noexcept {
    switch (kind_) {
      case Kind::shape: return "shape";
      case Kind::numeric: return "numeric";
      case Kind::validation: return "validation";
      case Kind::io: return "io";
      case Kind::config: return "config";
    }
    return "unknown";
  }

 private:
  Kind kind_;
};

[[noreturn]] inline void fail(Error::Kind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, Error::Kind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace emb
