#pragma once

#include <stdexcept>
#include <string>

namespace artikit {

// Error taxonomy shared by the whole library. The CLI maps these onto its
// exit codes: parse/validation failures -> 2, IO and format trouble -> 3,
// provider/network trouble -> 4. Everything derives from artikit::Error so
// callers can catch the whole family at once.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad argument values (out-of-range scalars, empty inputs, size mismatch).
struct ParameterError : Error {
  using Error::Error;
};

// Tensor/matrix shape disagreements.
struct ShapeError : Error {
  using Error::Error;
};

// Kinematic structure problems: cycles, orphans, duplicate ids.
struct StructuralError : Error {
  using Error::Error;
};

// Degenerate geometry where an operation has no defined answer.
struct GeometryError : Error {
  using Error::Error;
};

// Malformed input content (JSON, OBJ, URDF, model responses).
struct ParseError : Error {
  using Error::Error;
};

// Recognized file, wrong version or corrupted framing.
struct FormatError : Error {
  using Error::Error;
};

// Filesystem level failures (missing file, unwritable path, short read).
struct IoError : Error {
  using Error::Error;
};

// A referenced resource (mesh key, part id) was not found.
struct LookupError : Error {
  using Error::Error;
};

// Structure-prior provider failures: transport errors, bad envelopes,
// missing credentials.
struct ProviderError : Error {
  using Error::Error;
};

// Optimization blew up (divergence, non-finite loss).
struct TrainingError : Error {
  using Error::Error;
};

}  // namespace artikit
