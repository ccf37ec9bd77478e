#pragma once

#include <stdexcept>
#include <string>

namespace plsprune {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimension mismatch between operands; message names both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid numeric content (NaN/Inf) or insufficient data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Out-of-range or inconsistent parameter value.
class ParamError : public Error {
public:
    using Error::Error;
};

/// Malformed input file; message carries byte offset or line number.
class ParseError : public Error {
public:
    using Error::Error;
};

/// File metadata inconsistent with its payload.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Training diverged (NaN loss).
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Feature extraction cannot be applied to a layer.
class RepresentationError : public Error {
public:
    using Error::Error;
};

/// Importance criterion not applicable to the given network.
class CriterionError : public Error {
public:
    using Error::Error;
};

/// Structural network rewiring failed.
class SurgeryError : public Error {
public:
    using Error::Error;
};

/// PLS fit explains no variance; VIP undefined.
class DegenerateModelError : public Error {
public:
    using Error::Error;
};

}  // namespace plsprune
