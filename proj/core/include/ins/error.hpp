#pragma once

#include <stdexcept>
#include <string>

namespace ins {

/// Base for all library errors. The CLI maps each subtype to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, dimension mismatches, invalid configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite losses or gradients, singular systems, failed solves.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ins
