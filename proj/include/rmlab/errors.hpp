#pragma once

#include <stdexcept>
#include <string>

namespace rmlab {

// Base for every error raised by the library. The CLI maps usage/config
// problems to exit code 1 and everything else to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

// Math domain violations (log of a non-positive value, invalid prefix, ...).
struct DomainError : Error {
  using Error::Error;
};

struct EmptyReductionError : Error {
  using Error::Error;
};

// Token id outside the vocabulary, PAD in a forbidden position, etc.
struct TokenError : Error {
  using Error::Error;
};

struct InvalidInputError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct VersionError : Error {
  using Error::Error;
};

// Malformed data file; carries the 1-based line number.
struct ParseError : Error {
  ParseError(const std::string& msg, int line_no)
      : Error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
  int line;
};

}  // namespace rmlab
