#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace saliency_forge {

// Root of every exception raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or type invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

// File missing, unreadable, or not in the expected format.
class IoError : public Error {
public:
    using Error::Error;
};

// Exhaustive enumeration requested beyond the supported size.
class CapacityError : public Error {
public:
    using Error::Error;
};

class TrainingDivergedError : public Error {
public:
    TrainingDivergedError(std::size_t iteration, const std::string& what)
        : Error(what), iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

// Oracle could not be reached after all retries.
class OracleUnavailableError : public Error {
public:
    using Error::Error;
};

// Oracle answered with something that does not follow the wire contract.
class ProtocolError : public Error {
public:
    using Error::Error;
};

}  // namespace saliency_forge
