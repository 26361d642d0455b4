#pragma once

#include <stdexcept>
#include <string>

namespace surfreg {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared in a value or a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Degenerate or otherwise unusable point geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, training or command configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File ended before its declared contents.
class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint written by an incompatible format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint written by a build with a different floating width.
class PrecisionError : public Error {
 public:
  using Error::Error;
};

/// A caller-side contract (sizes, masks, ranges) was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace surfreg
