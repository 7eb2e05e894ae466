#pragma once

#include <stdexcept>
#include <string>

namespace xai {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or layer shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid caller-supplied data or configuration (bad beta, empty curve, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or corrupted file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File written by an incompatible format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// A referenced entity (tensor id, study, participant token, ...) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Request conflicts with current state (duplicate id, out-of-order submit, full study).
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// A participant or simulated agent accessed information the trial protocol withholds.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace xai
