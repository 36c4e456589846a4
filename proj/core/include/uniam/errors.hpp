#pragma once

#include <stdexcept>
#include <string>

namespace uniam {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// ArgumentError/ShapeError -> 1, DataError/GenerationError -> 2,
// NumericError -> 3.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace uniam
