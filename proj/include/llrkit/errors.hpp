#pragma once

#include <stdexcept>
#include <string>

namespace llrkit {

/// Input does not match the shape a network spec expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation is not defined for this network family / activation / bias setting.
class UnsupportedSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition on the parameter point or arguments was violated.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Linear algebra failed (SVD non-convergence, non-finite entries).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file or document.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace llrkit
