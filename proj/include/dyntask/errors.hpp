#pragma once

#include <stdexcept>
#include <string>

namespace dyntask {

// Every library failure derives from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// log/sqrt of non-positive input and similar.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, stride/padding, unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad labels, malformed manifests, unresolvable records.
class DataError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition (non-scalar loss, batch of one in
// train-mode batch norm, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Ordering violations of the training/evaluation protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Bad magic, version, truncation in binary files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Checkpoints whose layer shapes cannot be combined.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an op, a loss or a gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dyntask
