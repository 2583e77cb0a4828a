#pragma once

#include <stdexcept>
#include <string>

namespace surgidepth {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// Invalid model/run configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// API misuse, e.g. backward on a non-scalar.
struct ContractError : Error {
    using Error::Error;
};

// Math domain violations, e.g. log of a nonpositive depth.
struct DomainError : Error {
    using Error::Error;
};

// Evaluation protocol preconditions (empty masks, zero medians).
struct ProtocolError : Error {
    using Error::Error;
};

// Malformed files; byte_offset points at the failure.
struct ParseError : Error {
    ParseError(const std::string& msg, long offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    long byte_offset;
};

// Dataset-level problems (missing pairs, size mismatches).
struct DataError : Error {
    using Error::Error;
};

// Runtime failures during optimization, tagged with step context.
struct TrainError : Error {
    using Error::Error;
};

// Command-line misuse; maps to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

}  // namespace surgidepth
