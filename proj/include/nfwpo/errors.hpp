#pragma once

#include <stdexcept>
#include <string>

namespace nfwpo {

/// Input or parameter shapes that do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or infinity showed up where only finite values are allowed.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Environment used outside its reset/step protocol.
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad user-supplied parameter or configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or incompatible file on disk.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nfwpo
