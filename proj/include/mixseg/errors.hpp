#pragma once

#include <stdexcept>
#include <string>

namespace mixseg {

// Base class for all toolkit errors so callers can catch one type at the CLI
// boundary while tests can assert on the specific category.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/parameter shape violations; message names the offending axis.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Class label outside [0, C) or otherwise unusable.
class LabelError : public Error {
 public:
  using Error::Error;
};

// Empty or malformed input data (pools, images, masks).
class DataError : public Error {
 public:
  using Error::Error;
};

// Unreadable or corrupt serialized artifacts (checkpoints, pools).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values encountered during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API contract violations (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Gradient-check oracle failures (e.g. non-deterministic closure).
class OracleError : public Error {
 public:
  using Error::Error;
};

// Report generation failures (e.g. missing normalization baseline).
class ReportError : public Error {
 public:
  using Error::Error;
};

}  // namespace mixseg
