#pragma once

#include <stdexcept>
#include <string>

namespace isoguide {

// Every engine failure derives from Error so callers can separate engine
// errors from std library ones. Transport/protocol errors are kept apart
// from math errors because they are retryable.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ConditionError : public Error {
public:
    using Error::Error;
};

class LayoutError : public Error {
public:
    using Error::Error;
};

class TransportError : public Error {
public:
    TransportError(std::string endpoint, const std::string& what)
        : Error(endpoint + ": " + what), endpoint_(std::move(endpoint)) {}

    const std::string& endpoint() const noexcept { return endpoint_; }

private:
    std::string endpoint_;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

}  // namespace isoguide
