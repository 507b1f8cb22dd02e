#pragma once

#include <stdexcept>
#include <string>

namespace xfl {

/// Base of every error the toolkit raises for bad input or state.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unrecognized or corrupted on-disk artifact.
class FormatError : public Error {
public:
    using Error::Error;
};

} // namespace xfl
