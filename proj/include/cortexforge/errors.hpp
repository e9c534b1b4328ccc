#pragma once

#include <stdexcept>
#include <string>

namespace cortexforge {

// Error categories map one-to-one onto CLI exit codes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct NetError : std::runtime_error {
  explicit NetError(const std::string& what) : std::runtime_error(what) {}
};

// Geometry mismatches (wrong tensor shapes, incompatible stage chains).
struct GeometryError : ConfigError {
  explicit GeometryError(const std::string& what) : ConfigError(what) {}
};

}  // namespace cortexforge
