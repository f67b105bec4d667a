#pragma once

#include <stdexcept>
#include <string>

namespace saq {

// Base class for all library errors. Subclasses map to distinct CLI exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument values or violated operation contracts.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Malformed run configuration (unknown keys, bad values, missing files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced while strict-finite mode is active, or a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// File format problems (IDX magic, checkpoint version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

// I/O failures (missing file, short read/write).
class IoError : public Error {
 public:
  using Error::Error;
};

// Constraint cannot be satisfied (e.g. no feasible bitwidth config under budget).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace saq
