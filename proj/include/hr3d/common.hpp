#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace hr3d {

// Error taxonomy; the CLI maps these onto its exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad flags, unknown subcommands, malformed option values.  Exit code 1.
struct UsageError : Error {
    using Error::Error;
};

// Malformed files, shape mismatches, inconsistent datasets.  Exit code 2.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values where the numeric contract forbids them.  Exit code 3.
struct NumericError : Error {
    using Error::Error;
};

template <typename T>
inline void check_finite_span(const T* data, std::int64_t n, const char* what) {
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(data[i]))) {
            throw NumericError(std::string(what) + ": non-finite value at flat index " +
                               std::to_string(i));
        }
    }
}

}  // namespace hr3d
