#pragma once

#include <stdexcept>
#include <string>

namespace mctnet {

// Base class for every error raised by the library. The CLI maps the
// concrete subclass onto its process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Numerical contract violated (non-Hermitian input, fidelity out of range).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Vector or matrix dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed, truncated or unsupported file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Post-hoc analysis cannot produce a result from the given data.
class AnalysisError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class TrainingDivergedError : public NumericError {
 public:
  TrainingDivergedError(int epoch, int batch, const std::string& what)
      : NumericError(what), epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace mctnet
