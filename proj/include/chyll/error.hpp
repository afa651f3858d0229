#pragma once

#include <stdexcept>
#include <string>

namespace chyll {

// Error categories map one-to-one onto the C API status codes and CLI exit
// codes (config 2, simulation 3, training 4, evaluation 5).

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the autodiff layer when an op produces NaN/Inf or shapes disagree.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace chyll
