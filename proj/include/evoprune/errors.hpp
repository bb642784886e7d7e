#pragma once

#include <stdexcept>
#include <string>

namespace evoprune {

// Error taxonomy used across the library. The CLI maps these onto its
// exit codes: ConfigError -> 2, DataError/FormatError/DimensionError/
// BoundsError -> 3, NumericError -> 4.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/rank mismatches between tensors or layer contracts.
struct DimensionError : Error {
    using Error::Error;
};

// Index or count outside its valid range.
struct BoundsError : Error {
    using Error::Error;
};

// Non-finite values or a numerically unusable system.
struct NumericError : Error {
    using Error::Error;
};

// Malformed file payloads (weight files, IDX datasets, model specs).
struct FormatError : Error {
    FormatError(const std::string& msg, std::size_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    explicit FormatError(const std::string& msg) : Error(msg), byte_offset(0) {}
    std::size_t byte_offset;
};

// Bad run configuration (counts, missing seed, inconsistent modes).
struct ConfigError : Error {
    using Error::Error;
};

// Unreadable or semantically invalid input data.
struct DataError : Error {
    using Error::Error;
};

}  // namespace evoprune
