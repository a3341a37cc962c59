#pragma once

#include <stdexcept>
#include <string>

namespace risklab {

// Base for every contract violation raised by the library. CLI maps these
// to exit code 2 (mathematical/usage contract) vs 1 (flag parsing).
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionMismatch : Error {
  using Error::Error;
};
struct NotADistribution : Error {
  using Error::Error;
};
struct SupportViolation : Error {
  using Error::Error;
};
struct ZeroMarginal : Error {
  using Error::Error;
};
struct MissingLabelSlice : Error {
  using Error::Error;
};
struct DegenerateClassPrior : Error {
  using Error::Error;
};
struct InfeasibleFloor : Error {
  using Error::Error;
};
struct NonFiniteInput : Error {
  using Error::Error;
};
struct SimplexTooLarge : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct NonSmoothDisutility : Error {
  using Error::Error;
};
struct Diverged : Error {
  using Error::Error;
};
struct TrainingDiverged : Error {
  using Error::Error;
};
struct InsufficientTrials : Error {
  using Error::Error;
};
struct HeterogeneousNegatives : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};
struct ContractViolation : Error {
  using Error::Error;
};

}  // namespace risklab
