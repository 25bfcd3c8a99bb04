#pragma once

#include <stdexcept>
#include <string>

namespace vrfb {

enum class ErrorKind {
    state_invariant,   // non-finite or otherwise invalid simulator state
    domain,            // argument outside the mathematical domain
    design,            // unbalanced / degenerate statistical design
    encoding,          // message cannot be encoded
    log_invariant,     // tick regression or malformed record order
    log_format,        // unreadable log file
    io,
    config,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::state_invariant: return "state_invariant";
        case ErrorKind::domain: return "domain";
        case ErrorKind::design: return "design";
        case ErrorKind::encoding: return "encoding";
        case ErrorKind::log_invariant: return "log_invariant";
        case ErrorKind::log_format: return "log_format";
        case ErrorKind::io: return "io";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace vrfb
