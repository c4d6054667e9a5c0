#include "spdbci/error.hpp"

namespace spdbci {

Error::Error(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage: return "usage";
    case ErrorKind::Config: return "config";
    case ErrorKind::InvalidBand: return "invalid-band";
    case ErrorKind::Rank: return "rank";
    case ErrorKind::Length: return "length";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Arity: return "arity";
    case ErrorKind::Degenerate: return "degenerate-channel";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::NearSingular: return "near-singular";
    case ErrorKind::Numerical: return "numerical";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Config:
    case ErrorKind::InvalidBand:
    case ErrorKind::Rank:
      return 1;
    case ErrorKind::Length:
    case ErrorKind::Shape:
    case ErrorKind::Arity:
    case ErrorKind::Degenerate:
    case ErrorKind::Data:
    case ErrorKind::Format:
      return 2;
    case ErrorKind::NearSingular:
    case ErrorKind::Numerical:
      return 3;
  }
  return 3;
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace spdbci
