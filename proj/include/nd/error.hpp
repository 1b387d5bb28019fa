#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nd {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, parameters or usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced inside a numeric routine.
class NumericFault : public Error {
 public:
  using Error::Error;
};

// Checkpoint or recording that cannot be decoded.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Wire-protocol violation; offset is the byte position of the offending frame.
class FrameError : public Error {
 public:
  FrameError(const std::string& what, std::size_t offset)
      : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace nd
