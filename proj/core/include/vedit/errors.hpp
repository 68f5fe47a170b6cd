#pragma once

#include <stdexcept>
#include <string>

namespace vedit {

/// A loss or gradient became non-finite; training or editing was aborted.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required input artifact is missing or unusable.
class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vedit
