#pragma once

#include <stdexcept>
#include <string>

namespace nftl {

// Base for all errors raised by this library. CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required. CLI maps it to exit code 2.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace nftl
