#pragma once

#include <stdexcept>
#include <string>

namespace streamkit {

// Base for all streamkit error types. Catch sites that only care about
// "something in this library failed" catch this.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace streamkit
