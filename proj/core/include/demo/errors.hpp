#pragma once

#include <stdexcept>
#include <string>

namespace demo {

/// Root of the library error hierarchy. The three direct children map onto
/// the CLI exit-code contract: UsageError -> 1, DataError -> 2,
/// NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// ---- dynamics ----

class NearZeroLongitudinalSpeed : public NumericError {
 public:
  explicit NearZeroLongitudinalSpeed(double vx)
      : NumericError("longitudinal speed " + std::to_string(vx) +
                     " m/s below the singularity floor") {}
};

class SingularDenominator : public NumericError {
 public:
  SingularDenominator() : NumericError("discrete-step denominator is zero") {}
};

class InconsistentDisplacement : public NumericError {
 public:
  explicit InconsistentDisplacement(double residual, double tol)
      : NumericError("displacement is not a rigid rotation of the velocity "
                     "(residual " +
                     std::to_string(residual) + " > tol " +
                     std::to_string(tol) + ")") {}
};

// ---- numkernel ----

class ShapeMismatch : public NumericError {
 public:
  explicit ShapeMismatch(const std::string& what)
      : NumericError("shape mismatch: " + what) {}
};

class EmptySequence : public NumericError {
 public:
  EmptySequence() : NumericError("sequence must be non-empty") {}
};

class MissingGradient : public NumericError {
 public:
  explicit MissingGradient(const std::string& name)
      : NumericError("parameter '" + name + "' has no accumulated gradient") {}
};

class NonFiniteValue : public NumericError {
 public:
  explicit NonFiniteValue(const std::string& where)
      : NumericError("non-finite value produced by " + where) {}
};

// ---- stages / losses ----

class WrongHistoryLength : public NumericError {
 public:
  WrongHistoryLength(std::size_t got, std::size_t want)
      : NumericError("history length " + std::to_string(got) + ", expected " +
                     std::to_string(want)) {}
};

class LengthMismatch : public NumericError {
 public:
  explicit LengthMismatch(const std::string& what)
      : NumericError("length mismatch: " + what) {}
};

class ModeUnknown : public UsageError {
 public:
  explicit ModeUnknown(const std::string& mode)
      : UsageError("unknown dataset mode '" + mode +
                   "' (expected 'highway' or 'nuscenes')") {}
};

// ---- data_io ----

class MalformedRow : public DataError {
 public:
  MalformedRow(std::size_t line, const std::string& detail)
      : DataError("malformed row at line " + std::to_string(line) + ": " +
                  detail) {}
};

class MissingTarget : public DataError {
 public:
  explicit MissingTarget(const std::string& scene_id)
      : DataError("scene '" + scene_id + "' has no target vehicle") {}
};

class IrregularTimestep : public DataError {
 public:
  explicit IrregularTimestep(const std::string& scene_id)
      : DataError("scene '" + scene_id + "' has irregular frame spacing") {}
};

class BadRatios : public UsageError {
 public:
  BadRatios() : UsageError("split ratios must be non-negative and sum to 1") {}
};

// ---- eval_metrics ----

class HorizonExceeded : public UsageError {
 public:
  explicit HorizonExceeded(int second)
      : UsageError("second " + std::to_string(second) +
                   " is outside the prediction horizon") {}
};

class KTooLarge : public UsageError {
 public:
  KTooLarge(std::size_t k, std::size_t have)
      : UsageError("K=" + std::to_string(k) + " exceeds the " +
                   std::to_string(have) + " available candidates") {}
};

class IdMismatch : public DataError {
 public:
  explicit IdMismatch(const std::string& scene_id)
      : DataError("no prediction/ground-truth pair for scene '" + scene_id +
                  "'") {}
};

// ---- checkpoints ----

class CheckpointMismatch : public DataError {
 public:
  explicit CheckpointMismatch(const std::string& detail)
      : DataError("checkpoint does not match the model: " + detail) {}
};

}  // namespace demo
