#pragma once

#include <stdexcept>
#include <string>

namespace heliocast {

// Error taxonomy shared by all modules. The CLI maps ConfigError/UsageError
// to exit code 2 and everything else to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct ShapeError : ValidationError {
    using ValidationError::ValidationError;
};

struct ParameterError : ValidationError {
    using ValidationError::ValidationError;
};

}  // namespace heliocast
