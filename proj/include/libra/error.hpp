#pragma once

#include <stdexcept>
#include <string>

namespace libra {

// Raised when an evaluation produces NaN/Inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace libra
