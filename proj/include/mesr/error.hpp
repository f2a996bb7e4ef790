#pragma once

#include <stdexcept>
#include <string>

namespace mesr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised on shape/dimension disagreement between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

} // namespace mesr
