#pragma once

#include <stdexcept>
#include <string>

namespace ddr {

/// Rejected argument: bad shape, out-of-range parameter, malformed file.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation called on an object in the wrong state (e.g. a stale activation cache).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A cost or parameter became non-finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File system failure; the message carries the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace ddr
