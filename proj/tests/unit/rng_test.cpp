#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hiershift/rng.hpp"

using namespace hiershift;

// Published known-answer vectors for Philox4x32-10.
TEST(Philox, KnownAnswers) {
  using B = Philox4x32::Block;
  EXPECT_EQ(Philox4x32(0).block(0, 0), (B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32(~0ull).block(~0ull, ~0ull), (B{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  const std::uint64_t key = 0x299f31d0ull << 32 | 0xa4093822ull;
  EXPECT_EQ(Philox4x32(key).block(0x85a308d3ull << 32 | 0x243f6a88ull, 0x03707344ull << 32 | 0x13198a2eull),
            (B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Stream, KeysSeparatePurposes) {
  EXPECT_NE(stream_key(1, "offset", "a"), stream_key(1, "offset", "b"));
  EXPECT_NE(stream_key(1, "offset", "a"), stream_key(2, "offset", "a"));
  EXPECT_NE(stream_key(1, "offset", "a"), stream_key(1, "split", "a"));
  EXPECT_EQ(stream_key(1, "offset", "a"), stream_key(1, "offset", "a"));
}

TEST(Stream, Deterministic) {
  RandomStream a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Stream, NormalMoments) {
  RandomStream r(3);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Stream, UniformRangeAndShuffle) {
  RandomStream r(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  r.shuffle(v);
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 10u);
}
