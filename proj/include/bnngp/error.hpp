#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace bnngp {

/// Base exception for everything the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown by the sparse factorization; carries the offending (original) row index.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(const std::string& what, int pivot) : Error(what), pivot_(pivot) {}
  int pivot() const noexcept { return pivot_; }

 private:
  int pivot_;
};

namespace detail {
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& msg) {
    std::clog << "warning: " << msg << '\n';
  };
  return sink;
}
}  // namespace detail

/// Redirect library warnings (pass an empty function to silence them).
inline void set_warning_sink(std::function<void(const std::string&)> sink) {
  detail::warning_sink() = std::move(sink);
}

inline void warn(const std::string& msg) {
  if (auto& sink = detail::warning_sink()) sink(msg);
}

}  // namespace bnngp
