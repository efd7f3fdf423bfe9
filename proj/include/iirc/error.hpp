#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iirc {

enum class ErrorKind {
  DuplicateClass,
  CycleOrDepthViolation,
  DanglingParent,
  EmptyHierarchy,
  UnknownClass,
  IsSuperclass,
  InvalidSpec,
  Parse,
  UnknownLabel,
  DimensionMismatch,
  DuplicateId,
  EmptyClass,
  InfeasibleConfig,
  OutOfRange,
  EmptyBatch,
  Io,
  InvalidConfig,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the engine carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace iirc
