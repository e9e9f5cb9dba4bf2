#pragma once

#include <stdexcept>
#include <string>

namespace trafsim {

// Bad input files, flags, or arguments. The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnreachableError : public InputError {
 public:
  using InputError::InputError;
};

// Internal consistency failure during simulation. The CLI maps this to exit code 3.
class InvariantViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A peer sent a record that contradicts local ownership state.
class ProtocolError : public InvariantViolation {
 public:
  using InvariantViolation::InvariantViolation;
};

class TransportError : public InvariantViolation {
 public:
  using InvariantViolation::InvariantViolation;
};

}  // namespace trafsim
