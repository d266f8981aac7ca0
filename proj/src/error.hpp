#pragma once

#include <stdexcept>
#include <string>

namespace nelastic {

/// Error classes. The numeric value is the process exit code used by the CLI.
enum class ErrorKind : int {
    Usage = 1,
    Config = 2,
    Hypothesis = 3,
    Numeric = 4,
    Invariant = 5,
    Io = 6,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

[[nodiscard]] const char* error_kind_name(ErrorKind kind) noexcept;

}  // namespace nelastic
