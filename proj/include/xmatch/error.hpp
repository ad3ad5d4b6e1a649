#pragma once

#include <stdexcept>
#include <string>

namespace xmatch {

// Base for every error the library raises. The CLI maps subclasses to exit
// codes: ConfigError/LoadError -> 2, NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents that do not fit an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model/run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or invalid input files (vocab, features, pairs, pools, checkpoints).
class LoadError : public Error {
 public:
  using Error::Error;
};

// Undefined numeric results: all-masked attention rows, single-class AUC,
// failed gradient checks.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace xmatch
