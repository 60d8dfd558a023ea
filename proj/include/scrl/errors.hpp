#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace scrl {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CorruptFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateTrajectory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IncompatibleCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss, gradient, or importance weight. `step` is the optimizer
// step at which it was detected, or -1 when unknown.
class TrainingDivergence : public std::runtime_error {
 public:
  explicit TrainingDivergence(const std::string& what, int64_t step = -1)
      : std::runtime_error(step < 0 ? what : what + " at step " + std::to_string(step)),
        step_(step) {}

  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

}  // namespace scrl
