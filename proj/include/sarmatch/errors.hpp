#pragma once

#include <stdexcept>
#include <string>

namespace sarmatch {

// Invalid argument values (bad sizes, ranges, modes).
class ArgumentError : public std::runtime_error {
public:
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension mismatches; message names the offending axes.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// File / parse failures.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Inconsistent run configuration (e.g. empty labeled pool with ratio > 0).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace sarmatch
