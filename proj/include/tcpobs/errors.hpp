#pragma once

#include <stdexcept>
#include <string>

namespace tcpobs {

/// A configuration or scenario violates one of its invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Integration produced a non-finite state or could not proceed.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double time)
      : std::runtime_error(what + " at t=" + std::to_string(time)), time_(time) {}
  explicit NumericalError(const std::string& what)
      : std::runtime_error(what), time_(0.0) {}

  [[nodiscard]] double time() const noexcept { return time_; }

 private:
  double time_;
};

}  // namespace tcpobs
