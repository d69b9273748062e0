#pragma once

#include <stdexcept>
#include <string>

namespace blockfold {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Geometry that cannot define a frame: zero/collinear axis vectors,
// isotropic point clouds, coincident atoms.
struct DegenerateGeometry : Error {
    using Error::Error;
};

struct EmptyMolecule : Error {
    using Error::Error;
};

struct IsolatedNode : Error {
    using Error::Error;
};

struct AllMasked : Error {
    using Error::Error;
};

struct EntityMismatch : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct UnsupportedEntity : Error {
    using Error::Error;
};

struct TrainingDiverged : Error {
    using Error::Error;
};

}  // namespace blockfold
