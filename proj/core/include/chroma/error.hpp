#pragma once

#include <stdexcept>
#include <string>

namespace chroma {

// Error taxonomy mirrors the CLI exit codes: config/validation problems,
// I/O problems, and numeric failures (non-finite values, divergence).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ValueError : Error {
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace chroma
