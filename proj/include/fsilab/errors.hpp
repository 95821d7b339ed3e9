#pragma once

#include <stdexcept>
#include <string>

namespace fsilab {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Mismatched or unusable vector/matrix dimensions.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Argument outside its documented domain.
class ParameterError : public Error {
public:
  using Error::Error;
};

/// A vector or matrix entry is NaN or infinite.
class NonFiniteError : public Error {
public:
  using Error::Error;
};

/// Least-squares system is rank deficient at the requested tolerance.
class RankDeficient : public Error {
public:
  using Error::Error;
};

/// Snapshot pushed with a non-consecutive iteration index.
class SequenceError : public Error {
public:
  using Error::Error;
};

/// Two consecutive residuals coincide exactly; the Aitken factor is undefined.
class DegenerateResidual : public Error {
public:
  using Error::Error;
};

/// Column filtering removed every column of the data matrices.
class AllColumnsFiltered : public Error {
public:
  using Error::Error;
};

/// A model produced a state outside its physical domain (e.g. radius <= 0).
class NonPhysical : public Error {
public:
  using Error::Error;
};

/// Coupling loop hit the iteration cap without meeting both criteria.
class MaxIterationsExceeded : public Error {
public:
  MaxIterationsExceeded(const std::string& what, int iterations)
      : Error(what), iterations_(iterations) {}
  int iterations() const { return iterations_; }

private:
  int iterations_;
};

/// Enclosed incompressible fluid received a pure-Dirichlet interface.
class IncompressibilityDilemma : public Error {
public:
  using Error::Error;
};

/// Subproblem Newton iteration exceeded its cap.
class SolverDiverged : public Error {
public:
  using Error::Error;
};

/// Run configuration is invalid; message carries the key path.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Filesystem failure while writing reports.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace fsilab
