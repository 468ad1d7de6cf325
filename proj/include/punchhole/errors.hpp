#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace punchhole {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a grid is already at one-pixel patches and cannot be refined.
class RefinementExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An answer did not match the session's pending punch group, or arrived
/// when nothing was pending.
class ProtocolViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SessionFinished : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ReplayError : public std::runtime_error {
 public:
  ReplayError(std::size_t index, const std::string& what)
      : std::runtime_error("replay failed at entry " + std::to_string(index) + ": " + what),
        index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace punchhole
