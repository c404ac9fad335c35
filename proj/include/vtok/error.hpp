#pragma once

#include <stdexcept>
#include <string>

namespace vtok {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/dimension mismatch in a tensor op.
struct ShapeError : Error {
    using Error::Error;
};

// Out-of-range index (vocabulary targets, codebook ids, ...).
struct IndexError : Error {
    using Error::Error;
};

// NaN/Inf produced by a forward op.
struct NumericError : Error {
    using Error::Error;
};

// Non-finite gradient or diverged training run.
struct TrainError : Error {
    using Error::Error;
};

// Invalid configuration (bad grid, indivisible patch layout, bad file).
struct ConfigError : Error {
    using Error::Error;
};

// Scene construction failure (object leaves the canvas, ...).
struct GenerationError : Error {
    using Error::Error;
};

// Question does not belong to a known template.
struct JudgeError : Error {
    using Error::Error;
};

// Frame-sampling request exceeds the clip length.
struct SamplingError : Error {
    using Error::Error;
};

// Sequence assembly problems: overflow, empty video, empty loss mask.
struct SequenceError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

} // namespace vtok
