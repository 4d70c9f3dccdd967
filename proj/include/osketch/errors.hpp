// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace osketch {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class NonFiniteError : public Error { using Error::Error; };
class TimestepError : public Error { using Error::Error; };
class UnsupportedError : public Error { using Error::Error; };
class DegenerateDirectionError : public Error { using Error::Error; };
class TokenOverflowError : public Error { using Error::Error; };
class DescriptorMismatchError : public Error { using Error::Error; };
class InsufficientSamplesError : public Error { using Error::Error; };
class NotPsdError : public Error { using Error::Error; };

/// Raised by the optimization loop when the loss leaves the finite range.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, int step) : Error(what), step_(step) {}
    int step() const noexcept { return step_; }

private:
    int step_;
};

class FormatError : public Error { using Error::Error; };
class ChecksumError : public FormatError { using FormatError::FormatError; };
class VersionError : public FormatError { using FormatError::FormatError; };

class DatasetError : public Error { using Error::Error; };

/// Config validation failure; `field` is a dotted path such as "invert.lr".
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class IoError : public Error { using Error::Error; };

}  // namespace osketch
