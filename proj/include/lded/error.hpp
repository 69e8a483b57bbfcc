#pragma once

#include <stdexcept>
#include <string>

namespace lded {

enum class ErrorKind {
  invalid_argument,  // caller passed something the contract forbids
  data,              // input data is malformed or inconsistent
  io,                // filesystem failure
  internal,          // numerical failure or broken invariant
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::invalid_argument, what);
}

}  // namespace lded
