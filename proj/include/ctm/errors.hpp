#pragma once

#include <stdexcept>
#include <string>

namespace ctm {

/// Argument outside the mathematical domain of a kernel (NaN input, x off the basis interval, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Model specification or run configuration that cannot be honoured.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or invalid input data.
class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Post-fit inference could not be carried out (e.g. singular penalized Hessian).
class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ctm
