#pragma once

#include <stdexcept>
#include <string>

namespace ncimpute {

// Bad shapes, indices, flags or parameters supplied by the caller.
class input_error : public std::invalid_argument {
public:
  explicit input_error(const std::string& what) : std::invalid_argument(what) {}
};

// Argument outside the mathematical domain of a function (negative sigma, gamma <= 1 ...).
class domain_error : public std::domain_error {
public:
  explicit domain_error(const std::string& what) : std::domain_error(what) {}
};

// A numerical routine could not deliver (non-bracketing bisection, non-finite data ...).
class numerical_error : public std::runtime_error {
public:
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

class io_error : public std::runtime_error {
public:
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ncimpute
