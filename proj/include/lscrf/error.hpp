#pragma once

#include <stdexcept>
#include <string>

namespace lscrf {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A structural precondition on the graph failed (cycle, bad edge, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// The Gram matrix of a regression problem is singular; retry with lambda > 0.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed. `line()` is 1-based, 0 when unknown.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

#define LSCRF_REQUIRE(cond, msg)                \
  do {                                          \
    if (!(cond)) throw ::lscrf::Error(msg);     \
  } while (0)

}  // namespace lscrf
