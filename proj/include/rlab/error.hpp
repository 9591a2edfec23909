#pragma once

#include <stdexcept>
#include <string>

namespace rlab {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration value is outside its documented range.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error("config error in '" + field + "': " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// A caller violated a precondition (dimension mismatch, out-of-range input, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// A numerical routine failed (e.g. a Cholesky factorization).
class NumericError : public Error {
public:
    using Error::Error;
};

/// The model endpoint could not be reached or kept failing after retries.
class TransportError : public Error {
public:
    using Error::Error;
};

/// A response arrived but did not follow the expected protocol.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Strict replay mode found no recorded response for a request.
class CacheMissError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractError(message);
}

} // namespace rlab
