#pragma once

#include <stdexcept>
#include <string>

namespace rangedam {

/// Base class for every domain error raised by the library. The CLI maps
/// anything derived from it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (bad length, magic, version, non-finite values).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Tensor or parameter dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Input that has no meaningful answer (azimuth of the origin, pooling over
/// an empty grid).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Pixel coordinate outside the image.
class BoundsError : public Error {
 public:
  using Error::Error;
};

class RingInferenceError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace rangedam
