#pragma once

#include <stdexcept>
#include <string>

namespace progdit {

// config / usage problems -> CLI exit code 1
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

// missing or malformed inputs -> CLI exit code 2
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

// NaN losses, failed numeric contracts -> CLI exit code 3
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace progdit
