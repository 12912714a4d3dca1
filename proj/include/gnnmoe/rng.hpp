// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace gnnmoe {

namespace detail {
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based generator: draw i of a stream is a pure function of (key, i).
// Forking derives an independent key, so consumers that fork by a fixed site id
// see the same numbers regardless of the order in which they are evaluated.
class RngState {
 public:
  explicit RngState(std::uint64_t seed = 0) : key_(detail::mix64(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  RngState fork(std::uint64_t stream) const {
    RngState r;
    r.key_ = detail::mix64(key_ ^ detail::mix64(stream + 0x9e3779b97f4a7c15ULL));
    return r;
  }

  std::uint64_t next_u64() {
    return detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_);
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1).
  double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  /// Standard normal via Box-Muller (one draw per call, cosine branch).
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double gumbel() { return -std::log(-std::log(uniform_open())); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace gnnmoe
