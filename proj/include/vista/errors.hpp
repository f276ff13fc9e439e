#pragma once

#include <stdexcept>
#include <string>

namespace vista {

// Exit codes used by the CLI: 2 config, 3 data, 4 numeric, 5 frozen-violation.
struct Error : std::runtime_error {
    int exit_code;
    Error(const std::string& msg, int code) : std::runtime_error(msg), exit_code(code) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg, 2) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg, 3) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg, 3) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg, 4) {}
};

struct FrozenViolation : Error {
    explicit FrozenViolation(const std::string& msg) : Error(msg, 5) {}
};

} // namespace vista
