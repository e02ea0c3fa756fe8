#pragma once

#include <stdexcept>
#include <string>

namespace tstok {

// Error taxonomy used across the library. The CLI maps ConfigError to a
// usage failure (exit 1) and the remaining kinds to runtime failures
// (exit 2).

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tstok
