#pragma once

#include <stdexcept>
#include <string>

namespace spdbci {

enum class ErrorKind {
  Usage,
  Config,
  InvalidBand,
  Rank,
  Length,
  Shape,
  Arity,
  Degenerate,
  Data,
  Format,
  NearSingular,
  Numerical,
};

/// Library-wide exception. Every failure carries a kind so the CLI can map
/// it onto a stable process exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

/// 1 usage/config, 2 data, 3 numerical failure.
int exit_code(ErrorKind kind) noexcept;

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace spdbci
