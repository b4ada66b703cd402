#pragma once

#include <stdexcept>
#include <string>

namespace nnspec {

// Every failure the library reports derives from Error; kind() is what the CLI
// writes into its JSON error object.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

class DomainError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "domain"; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "usage"; }
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "convergence"; }
};

class OverflowError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "overflow"; }
};

// Asked for a derivative beyond what the kernel has at u = 1.
class InsufficientSmoothness : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "insufficient_smoothness"; }
};

// Values that can only come from broken numerics: a correlation leaving
// [-1,1], a negative spectral mass, a non-finite quadrature result.
class NumericalIntegrityError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical_integrity"; }
};

class UnderResolved : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "under_resolved"; }
};

// Hermite tail target not met within the allowed order.
class TailNotReached : public Error {
 public:
  TailNotReached(const std::string& what, double achieved)
      : Error(what), achieved_(achieved) {}
  const char* kind() const noexcept override { return "tail_not_reached"; }
  double achieved() const noexcept { return achieved_; }

 private:
  double achieved_;
};

}  // namespace nnspec
