// Deterministic random-number generation.
//
// Every stochastic component draws from this generator rather than from
// <random> distributions, because the standard library leaves distribution
// algorithms implementation-defined; this keeps traces reproducible for a
// given (seed, stream) pair no matter which toolchain built the binary.
// Streams are derived counter-style from a base seed so that batch run k
// always sees the same draws regardless of scheduling order.
#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

namespace fpopf {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256++ with splitmix64 stream derivation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : Rng(seed, 0) {}

  Rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t st = seed ^ (0x6a09e667f3bcc909ull + stream * 0x9e3779b97f4a7c15ull);
    for (auto& w : s_) w = splitmix64(st);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on (0, 1]: never returns 0, so -log(u) is always finite.
  double u01() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 random bits
    return (static_cast<double>(bits) + 1.0) * 0x1p-53;
  }

  // Exponential first-passage clock with the given rate (> 0).
  double exponential(double rate) {
    assert(rate > 0.0);
    return -std::log(u01()) / rate;
  }

  // Unbiased integer in [0, n) by rejection.
  std::size_t uniform_index(std::size_t n) {
    assert(n > 0);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::size_t>(v % n);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_;
};

// Truncated zeta (Zipf) distribution on {1, ..., n}: P(k) = k^-s / Z.
class ZipfTable {
 public:
  ZipfTable(int n, double s) : pmf_(static_cast<std::size_t>(n)), cdf_(pmf_.size()) {
    assert(n >= 1);
    double z = 0.0;
    for (int k = 1; k <= n; ++k) z += std::pow(static_cast<double>(k), -s);
    double acc = 0.0;
    for (int k = 1; k <= n; ++k) {
      pmf_[static_cast<std::size_t>(k - 1)] = std::pow(static_cast<double>(k), -s) / z;
      acc += pmf_[static_cast<std::size_t>(k - 1)];
      cdf_[static_cast<std::size_t>(k - 1)] = acc;
    }
    cdf_.back() = 1.0;  // guard against round-off at the top
    normalization_ = z;
  }

  int sample(Rng& rng) const {
    const double u = rng.u01();
    for (std::size_t i = 0; i < cdf_.size(); ++i) {
      if (u <= cdf_[i]) return static_cast<int>(i) + 1;
    }
    return static_cast<int>(cdf_.size());
  }

  double pmf(int k) const { return pmf_.at(static_cast<std::size_t>(k - 1)); }
  double normalization() const { return normalization_; }
  int max_value() const { return static_cast<int>(pmf_.size()); }

 private:
  std::vector<double> pmf_;
  std::vector<double> cdf_;
  double normalization_ = 0.0;
};

}  // namespace fpopf
