#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdna {

enum class ErrorKind {
  Io,
  MalformedHeader,
  MalformedFile,
  DimensionMismatch,
  NonFiniteValue,
  ZeroNormRow,
  DuplicateDocId,
  NegativePower,
  NonUniformDeltaT,
  UnknownDocId,
  MissingTrace,
  OverlappingCodons,
  IndexOutOfRange,
  TooFewPoints,
  DegenerateInput,
  ZeroNormInput,
  DimMismatch,
  NotADistribution,
  ZeroTokens,
  EmptyInput,
  InvalidArgument,
};

std::string_view error_kind_name(ErrorKind kind) noexcept;

// Every recoverable input/validation failure in the library is reported as an
// Error. what() starts with the kind name so diagnostics can be grepped.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace sdna
