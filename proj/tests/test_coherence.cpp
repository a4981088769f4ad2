#include <gtest/gtest.h>

#include <algorithm>

#include "oracles/mesi_reference.hpp"
#include "oracles/serialization.hpp"
#include "pimbench/coherence.hpp"
#include "pimbench/workloads.hpp"

using namespace pimbench;

namespace {

/// Agents with no operations; tests drive the System by hand.
CoherenceWorkload idle(std::uint32_t cpus = 1, std::uint32_t pims = 1, std::uint64_t pim_lines = 2048) {
  CoherenceWorkload w;
  w.kind = "idle";
  w.cpu_cores = cpus;
  w.pim_cores = pims;
  w.cpu_ops.resize(cpus);
  w.pim_ranges.push_back({0, pim_lines});
  return w;
}

SystemConfig with(Mechanism m) {
  SystemConfig c;
  c.mechanism = m;
  c.check_interval = 1;
  return c;
}

GraphParams small_graph(std::uint64_t seed) {
  GraphParams g;
  g.vertices = 256;
  g.edges = 1024;
  g.cpu_threads = 4;
  g.pim_cores = 4;
  g.kernels = 8;
  g.seed = seed;
  return g;
}

}  // namespace

TEST(Mechanism, NamesRoundTrip) {
  for (Mechanism m : kAllMechanisms) EXPECT_EQ(parse_mechanism(mechanism_name(m)), m);
  EXPECT_THROW(parse_mechanism("mesif"), ConfigError);
}

TEST(SystemConfig, Validation) {
  SystemConfig c;
  c.max_rollbacks = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.check_interval = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  const auto w = idle(0, 1);
  EXPECT_THROW(System(SystemConfig{}, w), ConfigError);
}

TEST(NonCacheable, PimDataBypassesCaches) {
  const auto w = idle();
  System s(with(Mechanism::NC), w);
  s.cpu_access(0, 3, 0, AccessKind::Write, 42, 0);
  const auto r = s.cpu_access(0, 3, 0, AccessKind::Read, 0, 1000);
  EXPECT_EQ(r.value, 42u);
  EXPECT_EQ(s.stats().uncached_accesses, 2u);
  EXPECT_EQ(s.stats().l2_hits, 0u);
  EXPECT_EQ(s.cache_state(0, 3), Mesi::I);
  EXPECT_EQ(r.done, 1000u + 200u);
  // Private data still caches.
  s.cpu_access(0, 100000, 0, AccessKind::Read, 0, 2000);
  s.cpu_access(0, 100000, 0, AccessKind::Read, 0, 3000);
  EXPECT_EQ(s.stats().cpu_l1_hits, 1u);
}

TEST(FineGrained, CpuReadOfPimModifiedLineShares) {
  const auto w = idle();
  System s(with(Mechanism::FG), w);
  s.pim_access_fg(0, 5, 2, AccessKind::Write, 99, 0);
  ASSERT_EQ(s.cache_state(1, 5), Mesi::M);
  const auto msgs = s.memory().message_count();
  const auto bytes = s.memory().off_chip_traffic();
  const auto r = s.cpu_access(0, 5, 2, AccessKind::Read, 0, 1000);
  EXPECT_EQ(r.value, 99u);
  EXPECT_EQ(s.cache_state(0, 5), Mesi::S);
  EXPECT_EQ(s.cache_state(1, 5), Mesi::S);
  // Forward out, owner data back.
  EXPECT_EQ(s.memory().message_count() - msgs, 2u);
  EXPECT_EQ(s.memory().off_chip_traffic() - bytes, 8u + 72u);
  s.check_invariants();
}

TEST(FineGrained, PimColdMissCostsTwoMessages) {
  const auto w = idle();
  System s(with(Mechanism::FG), w);
  const auto r = s.pim_access_fg(0, 9, 0, AccessKind::Read, 0, 0);
  EXPECT_EQ(s.memory().message_count(), 2u);
  EXPECT_EQ(s.memory().off_chip_traffic(), 8u + 72u);
  EXPECT_EQ(s.cache_state(1, 9), Mesi::E);
  EXPECT_GT(r.done, 2u);
  // Second access hits locally.
  s.pim_access_fg(0, 9, 0, AccessKind::Write, 1, r.done);
  EXPECT_EQ(s.memory().message_count(), 2u);
  EXPECT_EQ(s.cache_state(1, 9), Mesi::M);
}

TEST(FineGrained, PimWriteInvalidatesCpuCopy) {
  const auto w = idle();
  System s(with(Mechanism::FG), w);
  s.cpu_access(0, 7, 0, AccessKind::Write, 5, 0);
  EXPECT_TRUE(s.l2_dirty(7));
  const auto r = s.pim_access_fg(0, 7, 1, AccessKind::Write, 6, 1000);
  EXPECT_EQ(s.cache_state(0, 7), Mesi::I);
  EXPECT_EQ(s.cache_state(1, 7), Mesi::M);
  EXPECT_EQ(s.value_of(7)[0], 5u);
  EXPECT_EQ(s.value_of(7)[1], 6u);
  EXPECT_GT(r.done, 1000u);
  s.check_invariants();
  // A shared CPU copy is invalidated rather than forwarded.
  s.pim_access_fg(0, 8, 0, AccessKind::Read, 0, 2000);
  s.cpu_access(0, 8, 0, AccessKind::Read, 0, 3000);
  ASSERT_EQ(s.cache_state(0, 8), Mesi::S);
  s.pim_access_fg(0, 8, 0, AccessKind::Write, 3, 4000);
  EXPECT_EQ(s.cache_state(0, 8), Mesi::I);
  EXPECT_EQ(s.stats().invalidations, 1u);
}

TEST(FineGrained, RefusedUnderOtherMechanisms) {
  const auto w = idle();
  System s(with(Mechanism::CG), w);
  EXPECT_THROW(s.pim_access_fg(0, 1, 0, AccessKind::Read, 0, 0), SimError);
  EXPECT_THROW(s.cpu_access(0, 1, 8, AccessKind::Read, 0, 0), SimError);
  EXPECT_THROW(s.cpu_access(3, 1, 0, AccessKind::Read, 0, 0), SimError);
}

TEST(CoarseGrained, AcquireFlushesDirtyPimLines) {
  const auto w = idle();
  System s(with(Mechanism::CG), w);
  Cycle t = 0;
  for (LineAddr l = 0; l < 1000; ++l) t = s.cpu_access(0, l, 0, AccessKind::Write, l + 1, t).done;
  s.cpu_access(0, 500000, 0, AccessKind::Write, 1, t);  // private line stays
  const auto bytes = s.memory().off_chip_traffic();
  const auto f = s.cg_acquire(t);
  EXPECT_EQ(f.lines_flushed, 1000u);
  EXPECT_EQ(s.memory().off_chip_traffic() - bytes, 1000u * 72u);
  EXPECT_EQ(s.cache_state(0, 10), Mesi::I);
  EXPECT_TRUE(s.l2_dirty(500000));
  EXPECT_EQ(s.value_of(10)[0], 11u);
  EXPECT_THROW(s.cg_acquire(t), SimError);
  s.cg_release(f.done);
  EXPECT_THROW(s.cg_release(f.done), SimError);

  const auto f2 = s.cg_acquire(f.done);
  EXPECT_EQ(f2.lines_flushed, 0u);
  EXPECT_EQ(f2.done, f.done);
  s.cg_release(f2.done);
}

TEST(CoarseGrained, CpuBlocksWhileKernelHoldsLock) {
  const auto w = gen_graph_kernel(small_graph(3));
  System s(with(Mechanism::CG), w);
  s.run();
  EXPECT_GT(s.stats().blocked_cycles, 0u);
  EXPECT_EQ(s.stats().kernels, 8u);
  EXPECT_TRUE(oracle::replay_sequential(s.log()).ok);
}

TEST(System, SwmrHoldsThroughoutEveryMechanism) {
  for (Mechanism m : kAllMechanisms) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SmallParams p;
      p.seed = seed;
      const auto w = gen_small_random(p);
      auto c = with(m);
      c.seed = seed;
      System s(c, w);
      ASSERT_NO_THROW(s.run()) << mechanism_name(m) << " seed " << seed;
      s.check_invariants();
      if (m != Mechanism::LazyPim) {
        const auto replay = oracle::replay_sequential(s.log());
        ASSERT_TRUE(replay.ok) << mechanism_name(m) << ": " << replay.error;
        std::string why;
        EXPECT_TRUE(oracle::same_memory(replay.memory, s.final_memory(), &why)) << mechanism_name(m) << " " << why;
      }
    }
  }
}

TEST(System, DirectoryAgreesWithReferenceAutomaton) {
  // Three CPU caches over four lines; every step checked against the
  // textbook MESI automaton.
  oracle::MesiAutomaton<3> ref;
  const auto w = idle(3, 1, 0);
  System s(with(Mechanism::FG), w);
  Rng rng(4);
  std::array<oracle::Global<3>, 4> expect{};
  for (auto& g : expect) g.fill(oracle::St::I);
  Cycle t = 0;
  for (int i = 0; i < 3000; ++i) {
    const LineAddr line = 1000 + rng.below(4);
    const auto c = static_cast<std::uint32_t>(rng.below(3));
    const bool write = rng.chance(0.4);
    t = s.cpu_access(c, line, 0, write ? AccessKind::Write : AccessKind::Read, i, t).done;
    expect[line - 1000] = ref.next(expect[line - 1000], static_cast<int>(c), write ? oracle::Ev::Write : oracle::Ev::Read);
    for (int k = 0; k < 3; ++k)
      ASSERT_EQ(static_cast<int>(s.cache_state(k, line)), static_cast<int>(expect[line - 1000][k]));
  }
  s.check_invariants();
}

TEST(System, IdealNeverSlowerThanOtherPimMechanisms) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto w = gen_graph_kernel(small_graph(seed));
    Cycle ideal = 0;
    std::vector<Cycle> others;
    for (Mechanism m : {Mechanism::Ideal, Mechanism::FG, Mechanism::CG, Mechanism::NC, Mechanism::LazyPim}) {
      auto c = with(m);
      c.seed = seed;
      System s(c, w);
      s.run();
      if (m == Mechanism::Ideal) {
        ideal = s.stats().makespan;
        // Launch and completion packets remain; coherence is free.
        EXPECT_EQ(s.memory().off_chip_bytes(TrafficClass::Coherence), 0u);
      } else {
        others.push_back(s.stats().makespan);
      }
    }
    for (Cycle o : others) EXPECT_LE(ideal, o) << "seed " << seed;
  }
}

TEST(System, AttemptTrafficAddsUp) {
  // Per-attempt bytes: signatures plus control, invalidations and flushes.
  const auto w = gen_graph_kernel(small_graph(7));
  System s(with(Mechanism::LazyPim), w);
  s.run();
  std::size_t seen = 0;
  for (const auto& [_, rec] : s.tracker()->records())
    for (const auto& a : rec.attempts) {
      if (a.result == OutcomeKind::LockedCommit) continue;
      const std::uint64_t expect = Signature::kBytes * (a.read_links + a.write_links) + 8 * a.control_messages +
                                   8 * a.invalidations + 72 * a.flushed_lines;
      EXPECT_EQ(a.bytes, expect) << "kernel " << to_index(rec.id) << " attempt " << a.attempt;
      ++seen;
    }
  EXPECT_GT(seen, 0u);
}

TEST(System, RunsAreDeterministic) {
  const auto w = gen_graph_kernel(small_graph(11));
  for (Mechanism m : kAllMechanisms) {
    System a(with(m), w), b(with(m), w);
    a.run();
    b.run();
    EXPECT_EQ(a.stats().makespan, b.stats().makespan) << mechanism_name(m);
    EXPECT_EQ(a.memory().off_chip_traffic(), b.memory().off_chip_traffic());
    EXPECT_EQ(a.final_memory(), b.final_memory());
    EXPECT_EQ(a.log().size(), b.log().size());
  }
}

TEST(System, NoKernelsMeansSameFinalStateEverywhere) {
  auto w = gen_graph_kernel(small_graph(2));
  w.kernels.clear();
  std::optional<std::map<LineAddr, LineData>> first;
  for (Mechanism m : kAllMechanisms) {
    System s(with(m), w);
    s.run();
    if (!first) first = s.final_memory();
    EXPECT_TRUE(oracle::same_memory(*first, s.final_memory())) << mechanism_name(m);
  }
}
