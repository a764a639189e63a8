#pragma once

#include <stdexcept>
#include <string>

namespace ppose {

// Error taxonomy shared by the library and the CLI exit-code mapping:
// config/validation/load problems exit 2, everything else exits 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad input values (out-of-range coordinates, missing prompts, ...).
struct ValidationError : Error {
    using Error::Error;
};

// Bad configuration (non-involutive swap map, layers < 1, ...).
struct ConfigError : Error {
    using Error::Error;
};

// Mathematically undefined request (zero-area box, no visible keypoints).
struct DomainError : Error {
    using Error::Error;
};

// Malformed or inconsistent annotation files.
struct LoadError : ValidationError {
    using ValidationError::ValidationError;
};

// Rename map produced conflicting keypoint names during unification.
struct UnifyError : ValidationError {
    using ValidationError::ValidationError;
};

// Scene generator could not satisfy placement constraints.
struct GenerationError : Error {
    using Error::Error;
};

}  // namespace ppose
