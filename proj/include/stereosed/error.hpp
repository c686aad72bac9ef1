#pragma once

#include <stdexcept>
#include <string>

namespace stereosed {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or configuration (CLI exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Unreadable, malformed, or inconsistent input data (CLI exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or could not proceed (CLI exit code 3).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace stereosed
