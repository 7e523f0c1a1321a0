#pragma once

#include <stdexcept>
#include <string>

namespace lcqa {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed input record; message carries file/line context where known.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (bad parameter, missing key, impossible combination).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Referential integrity violation (dangling id, duplicate id, unresolvable chunk).
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// External service failure. `retryable` distinguishes transient transport
/// errors from permanent ones such as a dimension mismatch.
class ServiceError : public Error {
public:
    ServiceError(const std::string& msg, bool retryable) : Error(msg), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

private:
    bool retryable_;
};

}  // namespace lcqa
