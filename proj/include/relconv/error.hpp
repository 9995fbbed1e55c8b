#pragma once

#include <stdexcept>
#include <string>

namespace relconv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for the requested primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A file could not be read, written or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Metadata or labels failed validation during ingestion.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An option or configuration value is out of range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Graph construction or lookup failed (duplicate or unknown node).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Training produced a NaN or infinite loss.
class NonFiniteLossError : public Error {
 public:
  using Error::Error;
};

}  // namespace relconv
