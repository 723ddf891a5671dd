#pragma once

#include <stdexcept>
#include <string>

namespace ldc {

// Root of every error the library throws. Each subclass marks a distinct
// failure category so callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class DegenerateVectorError : public Error {
public:
    using Error::Error;
};

// Data-side failures: I/O, container format, validation.
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public DataError {
public:
    using DataError::DataError;
};

class BadMagicError : public DataError {
public:
    using DataError::DataError;
};

class VersionMismatchError : public DataError {
public:
    using DataError::DataError;
};

class TruncatedError : public DataError {
public:
    using DataError::DataError;
};

class ValidationError : public DataError {
public:
    using DataError::DataError;
};

class InsufficientDataError : public DataError {
public:
    using DataError::DataError;
};

class UndefinedCorrelationError : public Error {
public:
    using Error::Error;
};

}  // namespace ldc
