#pragma once

#include <stdexcept>
#include <string>

namespace fjmpc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

// Thrown by MPC controllers when the per-cycle QP cannot produce a usable move.
class ControllerInfeasible : public Error {
 public:
  using Error::Error;
};

// A plant step produced a non-finite state.
class IntegrationDiverged : public Error {
 public:
  IntegrationDiverged(double t, const std::string& what)
      : Error(what + " (t=" + std::to_string(t) + " s)"), time_(t) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

namespace detail {

inline void require_size(long actual, long expected, const char* what) {
  if (actual != expected) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(expected) +
                         ", got " + std::to_string(actual));
  }
}

}  // namespace detail
}  // namespace fjmpc
