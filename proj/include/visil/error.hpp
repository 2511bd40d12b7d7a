#pragma once

#include <stdexcept>
#include <string>

namespace visil {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched or out-of-range tensor extents.
class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class RankDeficiencyError : public Error {
public:
    using Error::Error;
};

/// Loss or parameters became NaN/Inf during training.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};
class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};
class VersionMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};
class TruncatedFileError : public FormatError {
public:
    using FormatError::FormatError;
};
class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace visil
