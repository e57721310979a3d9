#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace twohop {

// Caller passed something that violates an operation's precondition.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed binary container; `offset` is the byte position where decoding failed.
struct FormatError : std::runtime_error {
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

// An internal invariant did not hold. Indicates a bug, not bad input.
struct InvariantViolation : std::logic_error {
  using std::logic_error::logic_error;
};

inline void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidInput(message);
}

inline void ensure(bool ok, const std::string& message) {
  if (!ok) throw InvariantViolation(message);
}

}  // namespace twohop
