#ifndef DARD_ERROR_HPP
#define DARD_ERROR_HPP

#include <stdexcept>
#include <string>

namespace dard {

// Bad input files or records.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid parameters or configuration values.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated an operation precondition.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Ill-conditioned or diverging numerical computation.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failure inside a training loop, with location context in the message.
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dard

#endif  // DARD_ERROR_HPP
