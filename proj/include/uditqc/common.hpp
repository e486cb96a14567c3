#pragma once

#include <stdexcept>
#include <string>

namespace uditqc {

// Error classes map to CLI exit codes: config=1, io=2, numeric=3.
// Validation errors (bad arguments to library calls) are config-class.

struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : IoError {
    ParseError(const std::string& msg, std::size_t line)
        : IoError(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
    std::size_t line_number;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

}  // namespace uditqc
