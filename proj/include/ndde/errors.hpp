#pragma once

#include <stdexcept>
#include <string>

namespace ndde {

// Bad specs, misaligned delays, malformed configs. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector/matrix dimension mismatches.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Off-grid times or mismatched grids.
class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite state during integration; carries the step index where it
// first appeared. CLI exit code 2.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace ndde
