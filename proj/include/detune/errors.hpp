#pragma once

#include <stdexcept>
#include <string>

namespace detune {

// Error taxonomy mirrors the CLI exit codes:
//   ConfigError / std::invalid_argument -> 2 (bad config or bad call)
//   IoError                             -> 3 (missing/unreadable/unwritable files)
//   NumericalError                      -> 4 (diagnostic failures: norm drop,
//                                             lost normalization mass, underflow)

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// Precondition check for API misuse; message should name the violated condition.
#define DETUNE_REQUIRE(cond, msg)                                             \
    do {                                                                      \
        if (!(cond)) throw std::invalid_argument(msg);                        \
    } while (0)

} // namespace detune
