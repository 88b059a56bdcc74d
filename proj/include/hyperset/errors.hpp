#pragma once

#include <stdexcept>
#include <string>

namespace hyperset {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in an operation result.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; the message carries the line number when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace hyperset
