#pragma once

#include <stdexcept>
#include <string>

namespace picoframe {

// Malformed or inconsistent input data. The CLI maps this to exit status 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or command-line usage. The CLI maps this to exit status 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace picoframe
