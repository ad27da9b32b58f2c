#pragma once

#include <stdexcept>
#include <string>

namespace cem {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied value violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Image, ROI or model output dimensions do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Persisted data failed a checksum or version check.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A model backend misbehaved (crash, malformed reply, protocol mismatch).
class BackendError : public Error {
 public:
  using Error::Error;
};

}  // namespace cem
