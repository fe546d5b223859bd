#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>

namespace hpm {

/// Seeded random source with platform-independent draws.
///
/// The standard distributions are implementation-defined, so every draw here
/// is built directly on the 64-bit Mersenne twister output. Two runs with the
/// same seed produce identical streams on any conforming toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();

  /// Normal(0, std) truncated to [-2 std, 2 std] by rejection.
  double truncated_normal(double std);

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Child stream derived from this seed and a salt without consuming state.
  static Rng derive(std::uint64_t seed, std::uint64_t salt);

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace hpm
