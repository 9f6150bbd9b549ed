#pragma once

#include <stdexcept>
#include <string>

namespace mewls {

/// Base class for all method-level failures reported by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularMatrix : Error {
    using Error::Error;
};

struct RankDeficient : Error {
    using Error::Error;
};

struct NonPositiveWeight : Error {
    using Error::Error;
};

struct NewtonDiverged : Error {
    using Error::Error;
};

/// The system is consistent: the uniform-weight residual is (numerically) zero,
/// so there is no error level left to continue in.
struct ZeroResidual : Error {
    using Error::Error;
};

struct OutOfRange : Error {
    using Error::Error;
};

struct InsufficientSamples : Error {
    using Error::Error;
};

struct NoFeasibleGridPoint : Error {
    using Error::Error;
};

struct CoreSetRankDeficient : Error {
    using Error::Error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

/// CSV-level failure carrying the 1-based line (and column, when known).
struct ParseError : Error {
    ParseError(const std::string& what, long line, long column = -1)
        : Error(what + " (line " + std::to_string(line) +
                (column >= 0 ? ", column " + std::to_string(column) : std::string{}) + ")"),
          line(line),
          column(column) {}

    long line;
    long column;
};

}  // namespace mewls
