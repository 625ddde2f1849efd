#pragma once

#include <stdexcept>
#include <string>

namespace codetect {

/// Invalid or out-of-range configuration (bad config file, bad spec values).
/// CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse: calling an operation whose preconditions do not hold
/// (backward without forward, epoch out of range, unknown keep index).
struct UsageError : std::logic_error {
    explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

/// Failure while running (non-finite loss, unreadable file, I/O error).
/// CLI maps this to exit code 2.
struct RuntimeFailure : std::runtime_error {
    explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace codetect
