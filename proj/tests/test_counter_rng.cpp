#include <cmath>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "aerloc/counter_rng.hpp"

using aerloc::CounterRng;
using aerloc::PhiloxBlock;
using aerloc::philox4x32_10;

// Published known-answer vectors for Philox-4x32-10.
TEST(Philox, KnownAnswerZero) {
  const PhiloxBlock out = philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out, (PhiloxBlock{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
}

TEST(Philox, KnownAnswerAllOnes) {
  const PhiloxBlock out = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                        {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out, (PhiloxBlock{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
}

TEST(Philox, KnownAnswerPiDigits) {
  const PhiloxBlock out = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                        {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out, (PhiloxBlock{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(CounterRng, DrawsArePureFunctionsOfAddress) {
  const CounterRng a(42, 3);
  const CounterRng b(42, 3);
  std::vector<double> forward, backward;
  for (std::uint64_t i = 0; i < 100; ++i) forward.push_back(a.uniform(7, i));
  for (std::uint64_t i = 100; i-- > 0;) backward.push_back(b.uniform(7, i));
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(forward[i], backward[99 - i]);
}

TEST(CounterRng, StreamsAndSeedsDiffer) {
  const CounterRng base(1, 1);
  const CounterRng other_stream(1, 2);
  const CounterRng other_seed(2, 1);
  int same_stream = 0, same_seed = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    same_stream += base.uniform(0, i) == other_stream.uniform(0, i);
    same_seed += base.uniform(0, i) == other_seed.uniform(0, i);
  }
  EXPECT_EQ(same_stream, 0);
  EXPECT_EQ(same_seed, 0);
}

TEST(CounterRng, UniformIsInOpenUnitInterval) {
  const CounterRng r(9, 9);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform(1, static_cast<std::uint64_t>(i));
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  // mean 1/2, standard error sqrt(1/12/n)
  EXPECT_NEAR(sum / n, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(CounterRng, NormalMomentsWithinStandardError) {
  const CounterRng r(5, 11);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal(static_cast<std::uint64_t>(i), 0);
    s1 += z;
    s2 += z * z;
  }
  const double mean = s1 / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 5.0 * std::sqrt(2.0 / n));
}
