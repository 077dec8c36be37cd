#pragma once

#include <stdexcept>
#include <string>

namespace vesselseg {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A label value fell outside [0, 1].
struct InvalidLabelError : Error {
    using Error::Error;
};

/// Duplicate or out-of-range node indices in a region graph.
struct InvalidGraphError : Error {
    using Error::Error;
};

/// Tensor or raster dimensions do not match the operation's contract.
struct ShapeError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Metrics requested over zero evaluated pixels.
struct EmptyEvaluationError : Error {
    using Error::Error;
};

/// AUC requested on a single-class pixel set.
struct DegenerateAucError : Error {
    using Error::Error;
};

}  // namespace vesselseg
