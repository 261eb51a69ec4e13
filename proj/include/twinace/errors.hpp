#pragma once

#include <stdexcept>
#include <string>

namespace twinace {

/// Base class for all twinace errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A required column is absent or a covariate is missing from a pair.
class SchemaError : public Error {
public:
  using Error::Error;
};

/// A cell could not be parsed (reports the 1-based data row).
class ParseError : public Error {
public:
  using Error::Error;
};

/// Too few observations for the requested operation.
class InsufficientDataError : public Error {
public:
  using Error::Error;
};

/// A linear system or design matrix is (numerically) rank deficient.
class SingularityError : public Error {
public:
  using Error::Error;
};

/// A link inverse or moment structure was evaluated outside its domain.
class DomainError : public Error {
public:
  using Error::Error;
};

/// Invalid scenario or study configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Data without enough variation to estimate anything (e.g. zero variance).
class DegenerateDataError : public Error {
public:
  using Error::Error;
};

/// Random sampling failed (tail cap exceeded).
class SamplingError : public Error {
public:
  using Error::Error;
};

/// API misuse, e.g. mismatched dimensions between caller-supplied objects.
class UsageError : public Error {
public:
  using Error::Error;
};

/// File system failures.
class IoError : public Error {
public:
  using Error::Error;
};

} // namespace twinace
