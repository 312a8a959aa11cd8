#pragma once

#include <stdexcept>
#include <string>

namespace ppx {

// Error taxonomy shared by the whole library. The CLI maps these onto its
// exit codes: validation -> 2, I/O -> 3, numerical -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error {
    using Error::Error;
};
struct FileNotFound : IoError {
    using IoError::IoError;
};
struct UnsupportedFormat : IoError {
    using IoError::IoError;
};
struct CorruptStream : IoError {
    using IoError::IoError;
};
struct CheckpointError : IoError {
    using IoError::IoError;
};

struct InvalidArgument : Error {
    using Error::Error;
};
struct DimensionMismatch : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};
struct DegenerateQuad : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};
struct ConfigError : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};
struct CalibrationError : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};
struct ProvenanceError : InvalidArgument {
    using InvalidArgument::InvalidArgument;
};

struct NumericalError : Error {
    using Error::Error;
};

} // namespace ppx
