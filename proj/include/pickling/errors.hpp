#pragma once

#include <stdexcept>
#include <string>

namespace pickling {

// Caller handed in data that violates a documented precondition.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Operations invoked out of order (backward without forward, step after terminal, ...).
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad or incomplete configuration (speed table gaps, out-of-range IC, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or otherwise diverged.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pickling
