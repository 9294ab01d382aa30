// Shared basics: error taxonomy, numeric formatting, hashing, timing.
#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fpopf {

// Input files that fail structural checks (bad tokens, duplicate ids,
// islands, multiple slacks, nonpositive reactance, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Iterative procedures that exhaust their budget or stall.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A solve finishing at a point that fails a required certificate
// (e.g. an equilibrium whose Hessian is not positive definite).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem / OS-level failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shortest round-trippable decimal form of a double; used by every
// serializer so that re-reading a written file reproduces bits.
inline std::string num_str(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string num_str(int v) { return std::to_string(v); }
inline std::string num_str(std::size_t v) { return std::to_string(v); }

// FNV-1a, used to stamp outputs with a hash of the configuration that
// produced them.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

class WallTimer {
 public:
  WallTimer() : start_(clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_;
};

}  // namespace fpopf
