#pragma once

#include <stdexcept>
#include <string>

namespace svit {

/// Tensor extents that do not fit an operation.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A model/training configuration that violates a structural constraint.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// A call made outside its documented domain (e.g. a schedule step past the end).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File system or codec failure; the message carries the path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace svit
