#pragma once

#include <stdexcept>
#include <string>

namespace mfgirl {

/// Base of every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// numerics
struct SingularMatrix : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct NonFiniteEvaluation : Error { using Error::Error; };

// model / input handling
struct ParseError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct BadParameter : Error { using Error::Error; };
struct MissingTheta : Error {
  MissingTheta() : Error("model has no theta (reward weights)") {}
};

// mdp
struct NonUniqueStationary : Error { using Error::Error; };

// solvers
struct NotConverged : Error { using Error::Error; };
struct NonDescent : Error {
  NonDescent(int iter, double slope)
      : Error("non-descent direction at iteration " + std::to_string(iter) +
              " (<grad psi, d> = " + std::to_string(slope) + ")"),
        iteration(iter) {}
  int iteration;
};
struct LineSearchStall : Error {
  explicit LineSearchStall(int iter)
      : Error("line search stalled at iteration " + std::to_string(iter)),
        iteration(iter) {}
  int iteration;
};
struct BoundaryViolation : Error { using Error::Error; };
struct NonFinite : Error { using Error::Error; };

// estimation
struct EmptyData : Error {
  EmptyData() : Error("no trajectory data") {}
};

}  // namespace mfgirl
