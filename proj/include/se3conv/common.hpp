#pragma once

#include <stdexcept>
#include <string>

namespace se3conv {

// Invalid arguments, broken invariants, malformed data.
struct validation_error : std::runtime_error {
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / stream failures.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw validation_error(msg);
}

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace se3conv
