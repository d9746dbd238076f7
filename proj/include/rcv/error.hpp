#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rcv {

enum class ErrorKind {
    InvalidArgument,
    EmptyFrustum,
    DegenerateExtent,
    EmptyAfterPrune,
    DegenerateCloud,
    InconsistentViews,
    DetectorUnavailable,
    ProtocolError,
    InfeasibleSpec,
    ConfigError,
    IoError,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::EmptyFrustum: return "EmptyFrustum";
        case ErrorKind::DegenerateExtent: return "DegenerateExtent";
        case ErrorKind::EmptyAfterPrune: return "EmptyAfterPrune";
        case ErrorKind::DegenerateCloud: return "DegenerateCloud";
        case ErrorKind::InconsistentViews: return "InconsistentViews";
        case ErrorKind::DetectorUnavailable: return "DetectorUnavailable";
        case ErrorKind::ProtocolError: return "ProtocolError";
        case ErrorKind::InfeasibleSpec: return "InfeasibleSpec";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a kind so callers (the
/// recursion engine, the HTTP service, the CLI) can map it without string
/// matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// The message without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace rcv
