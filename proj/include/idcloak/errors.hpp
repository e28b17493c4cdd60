#pragma once

#include <stdexcept>
#include <string>

namespace idcloak {

// Invalid arguments use std::invalid_argument. The types below map onto the
// CLI exit codes (config 2, data 3, numeric 4).

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed ".tns" bytes or sidecar files.
struct FormatError : DataError {
    using DataError::DataError;
};

// Non-finite loss or parameters.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace idcloak
