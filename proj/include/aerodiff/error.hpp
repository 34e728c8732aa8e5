#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aerodiff {

enum class ErrorKind {
    Schedule,
    Index,
    Data,
    Plan,
    Inference,
    Config,
    Numerical,
    Normalization,
    Condition,
    Statistics,
    Parse,
    Validation,
    Protocol,
    Evaluation,
    Import,
    Io,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; the kind tells callers (and the CLI
// exit-code mapping) which domain rejected the input.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message);

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

}  // namespace aerodiff
