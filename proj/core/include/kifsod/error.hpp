#pragma once

#include <stdexcept>
#include <string>

namespace kifsod {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration supplied by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing, malformed or inconsistent data (datasets, checkpoints, manifests).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image dimensions that do not match what the model expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Zero-length vectors or other geometry that cannot be normalized.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became non-finite.
class NumericalError : public Error {
 public:
  NumericalError(std::string component, long iteration, const std::string& what)
      : Error(what), component_(std::move(component)), iteration_(iteration) {}

  const std::string& component() const noexcept { return component_; }
  /// Training iteration at which the failure happened, -1 outside a training loop.
  long iteration() const noexcept { return iteration_; }

 private:
  std::string component_;
  long iteration_;
};

}  // namespace kifsod
