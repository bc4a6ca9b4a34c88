#pragma once

#include <stdexcept>
#include <string>

namespace testlet {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid arguments, shapes or configuration.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Fitted or supplied communality >= 1 (negative residual variance).
class HeywoodError : public Error {
public:
    using Error::Error;
};

// |lambda| too small for a difficulty to be defined.
class DegenerateLoading : public Error {
public:
    using Error::Error;
};

// Empty data or an item with a single observed category.
class DegenerateData : public Error {
public:
    using Error::Error;
};

// A sampler state became non-finite.
class ChainDivergence : public Error {
public:
    using Error::Error;
};

// Within-chain variance is zero, PSRF undefined.
class ZeroVariance : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace testlet
