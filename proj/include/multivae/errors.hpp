#pragma once

#include <stdexcept>
#include <string>

namespace multivae {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidDistributionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct VocabularyError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptySequenceError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidTrajectoryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace multivae
