#pragma once

#include <stdexcept>
#include <string>

namespace mood {

// Error taxonomy shared across the library. The CLI maps these onto
// process exit codes (config -> 2, data -> 3, divergence -> 4).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration: unknown tags, inconsistent specs, malformed flags.
struct ConfigError : Error {
    using Error::Error;
};

// Bad data: missing files, out-of-range values, frame gaps, undecodable
// images, label classes absent from a training fold.
struct DataError : Error {
    using Error::Error;
};

// Contract violations at model boundaries (wrong input shape, untrained
// teacher, mismatched penultimate width).
struct ModelError : Error {
    using Error::Error;
};

// Non-finite loss during training. Carries the epoch it happened in.
struct DivergenceError : Error {
    int epoch;
    DivergenceError(const std::string& msg, int epoch_idx)
        : Error(msg), epoch(epoch_idx) {}
};

}  // namespace mood
