#pragma once

#include <stdexcept>
#include <string>

namespace mtpc {

// Invalid architecture description (bad n, r, v or unsupported combination).
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition: shape mismatch, token out of
// range, empty prefix and so on.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A size or degeneracy guard tripped (enumeration too large, residual of
// identical distributions, zero baseline).
class GuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent configuration / checkpoint input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mtpc
