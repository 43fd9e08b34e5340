#pragma once

#include <stdexcept>
#include <string>

namespace dice {

// Base of every error raised by the engine. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent input data (bad files, shape mismatches, degenerate
// numerical inputs).
class DataError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dice
