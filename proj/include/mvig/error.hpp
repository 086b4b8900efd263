#pragma once

#include <stdexcept>
#include <string>

namespace mvig {

/// Shapes, channel counts or hyper-parameters that do not fit together.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Caller-supplied input (image size, variant name, file contents) is unusable.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed or incompatible weights file.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Broken internal invariant (e.g. an adjacency index out of range).
class InternalError : public std::logic_error {
 public:
  explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace mvig
