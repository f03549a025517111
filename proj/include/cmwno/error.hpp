#pragma once

#include <stdexcept>
#include <string>

namespace cmwno {

/// Failure categories. Each maps to a CLI exit code.
enum class ErrorKind {
    config,   // bad configuration or precondition violation (exit 2)
    numeric,  // NaN, blow-up, degenerate numerics (exit 3)
    io,       // file system or file format problems (exit 4)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::numeric: return 3;
        case ErrorKind::io: return 4;
    }
    return 1;
}

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "config";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace cmwno
