#pragma once

#include <stdexcept>
#include <string>

namespace avt {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external data: bad magic numbers, truncated files, schema violations.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Incompatible tensor/layer shapes.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Non-finite values where finite ones are required (CLI exit code 3).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

} // namespace avt
