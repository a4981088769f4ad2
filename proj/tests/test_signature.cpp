#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "pimbench/rng.hpp"
#include "pimbench/signature.hpp"

using namespace pimbench;

TEST(Signature, InsertedLineTestsPositive) {
  Signature s(1);
  s.insert(42);
  EXPECT_TRUE(s.test(42));
  EXPECT_EQ(s.insert_count(), 1u);
}

TEST(Signature, EmptyTestsNegative) {
  Signature s(1);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_FALSE(s.test(rng.next() >> 16));
  EXPECT_EQ(s.chain_length(), 1u);
  EXPECT_EQ(s.transfer_bytes(), 256u);
}

TEST(Signature, SizeIsTwoBanksOf1024Bits) {
  EXPECT_EQ(Signature::kBytes, 256u);
  Signature s(3);
  for (LineAddr l = 0; l < 5000; ++l) {
    EXPECT_LT(s.bank_index(0, l), 1024u);
    EXPECT_LT(s.bank_index(1, l), 1024u);
  }
}

TEST(Signature, DuplicatesDoNotCount) {
  Signature s(2);
  for (int i = 0; i < 10; ++i) s.insert(7);
  EXPECT_EQ(s.insert_count(), 1u);
}

TEST(Signature, ChainsAfter607Lines) {
  Signature s(9);
  Rng rng(9);
  std::set<LineAddr> in;
  while (in.size() < 607) {
    const LineAddr l = rng.next() >> 16;
    in.insert(l);
    s.insert(l);
  }
  EXPECT_EQ(s.chain_length(), 1u);
  LineAddr extra = 1;
  while (in.count(extra)) ++extra;
  s.insert(extra);
  EXPECT_EQ(s.chain_length(), 2u);
  EXPECT_EQ(s.transfer_bytes(), 512u);
  for (LineAddr l : in) EXPECT_TRUE(s.test(l));
  EXPECT_TRUE(s.test(extra));
  s.clear();
  EXPECT_EQ(s.chain_length(), 1u);
  EXPECT_TRUE(s.empty());
}

TEST(Signature, FalsePositiveRateNearTwentyPercentAt607) {
  Signature s(17);
  Rng rng(17);
  std::set<LineAddr> in;
  while (in.size() < 607) {
    const LineAddr l = rng.next() >> 16;
    if (in.insert(l).second) s.insert(l);
  }
  int fp = 0, probes = 0;
  while (probes < 100000) {
    const LineAddr l = rng.next() >> 16;
    if (in.count(l)) continue;
    ++probes;
    fp += s.test(l);
  }
  const double rate = double(fp) / probes;
  EXPECT_GT(rate, 0.17);
  EXPECT_LT(rate, 0.23);
}

TEST(SigMatch, SupersetOfExactIntersection) {
  Rng rng(23);
  for (int trial = 0; trial < 10000; ++trial) {
    Signature s(rng.next());
    std::set<LineAddr> inserted;
    const auto n = rng.between(0, 40);
    for (std::uint64_t i = 0; i < n; ++i) {
      const LineAddr l = rng.below(512);
      inserted.insert(l);
      s.insert(l);
    }
    std::vector<LineAddr> probe;
    for (int i = 0; i < 20; ++i) probe.push_back(rng.below(512));
    const auto m = sig_match(s, probe);
    for (LineAddr l : probe) {
      if (inserted.count(l)) {
        ASSERT_NE(std::find(m.begin(), m.end(), l), m.end());
      }
    }
  }
}

TEST(SigMatch, DisjointSetsWithoutBitCollisionMatchNothing) {
  const std::vector<LineAddr> a = {10, 20, 30}, b = {11, 21, 31};
  std::uint64_t seed = 0;
  for (;; ++seed) {
    Signature probe(seed);
    bool collide = false;
    for (LineAddr x : a)
      for (LineAddr y : b)
        collide = collide || probe.bank_index(0, x) == probe.bank_index(0, y) ||
                  probe.bank_index(1, x) == probe.bank_index(1, y);
    if (!collide) break;
  }
  Signature s(seed);
  for (LineAddr x : a) s.insert(x);
  EXPECT_TRUE(sig_match(s, b).empty());
  EXPECT_EQ(sig_match(s, a).size(), 3u);
}
