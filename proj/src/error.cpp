#include "sdna/error.hpp"

namespace sdna {

std::string_view error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Io: return "IoError";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::MalformedFile: return "MalformedFile";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::ZeroNormRow: return "ZeroNormRow";
    case ErrorKind::DuplicateDocId: return "DuplicateDocId";
    case ErrorKind::NegativePower: return "NegativePower";
    case ErrorKind::NonUniformDeltaT: return "NonUniformDeltaT";
    case ErrorKind::UnknownDocId: return "UnknownDocId";
    case ErrorKind::MissingTrace: return "MissingTrace";
    case ErrorKind::OverlappingCodons: return "OverlappingCodons";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::ZeroNormInput: return "ZeroNormInput";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::NotADistribution: return "NotADistribution";
    case ErrorKind::ZeroTokens: return "ZeroTokens";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "UnknownError";
}

namespace {

std::string compose(ErrorKind kind, const std::string& detail) {
  std::string out(error_kind_name(kind));
  if (!detail.empty()) {
    out += ' ';
    out += detail;
  }
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, const std::string& detail)
    : std::runtime_error(compose(kind, detail)), kind_(kind), detail_(detail) {}

}  // namespace sdna
