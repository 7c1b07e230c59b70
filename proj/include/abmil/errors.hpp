#pragma once

#include <stdexcept>
#include <string>

namespace abmil {

// Incompatible tensor shapes, or an operation applied to the wrong rank.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed on-disk data (IDX, checkpoints, datasets).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration: bad key, out-of-range value, inconsistent sizes.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// File system failure (missing file, unwritable directory).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace abmil
