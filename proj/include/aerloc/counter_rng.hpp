#pragma once

// Counter-based random numbers (Philox-4x32-10). Every draw is a pure
// function of (seed, stream, counter), so simulation streams can be
// regenerated in any order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace aerloc {

using PhiloxBlock = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

inline PhiloxBlock philox4x32_10(PhiloxBlock ctr, PhiloxKey key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(p0)};
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent named stream of a seeded experiment. Draws are addressed by a
/// 64-bit step and a 64-bit index within that step.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) {
    const std::uint64_t k = splitmix64(seed ^ splitmix64(stream + 0x5851F42D4C957F2Dull));
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  PhiloxBlock block(std::uint64_t step, std::uint64_t index) const {
    return philox4x32_10({static_cast<std::uint32_t>(step),
                          static_cast<std::uint32_t>(step >> 32),
                          static_cast<std::uint32_t>(index),
                          static_cast<std::uint32_t>(index >> 32)},
                         key_);
  }

  /// Two uniforms in the open interval (0, 1), 53-bit resolution.
  std::array<double, 2> uniform2(std::uint64_t step, std::uint64_t index) const {
    const PhiloxBlock b = block(step, index);
    return {to_unit(b[0], b[1]), to_unit(b[2], b[3])};
  }

  double uniform(std::uint64_t step, std::uint64_t index) const {
    return uniform2(step, index)[0];
  }

  /// Standard normal via Box-Muller on one block.
  double normal(std::uint64_t step, std::uint64_t index) const {
    const auto [u1, u2] = uniform2(step, index);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  PhiloxKey key_{};
};

}  // namespace aerloc
