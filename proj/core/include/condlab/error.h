#pragma once

#include <stdexcept>
#include <string>

namespace condlab {

// Error hierarchy used across the library. Every failure mode surfaces as a
// subclass of Error so callers may catch by category or wholesale.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or size disagreement, including batches too small for an op.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN inputs, out-of-range labels, bad parameter values (p, alpha, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// A requested object would exceed a configured memory/parameter cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment/topology configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Filesystem problems: unreadable, unwritable, truncated.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed binary payload (bad magic, wrong element type, short file).
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace condlab
