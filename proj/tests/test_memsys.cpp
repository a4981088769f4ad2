#include <gtest/gtest.h>

#include <cmath>

#include "pimbench/memsys.hpp"
#include "pimbench/rng.hpp"
#include "pimbench/rpt.hpp"

using namespace pimbench;

namespace {

AccessRequest cpu_read(PhysAddr pa, Cycle t = 0) { return {Requester::cpu(0), pa, AccessKind::Read, 64, t}; }
AccessRequest pim_read(PhysAddr pa, Cycle t = 0, std::uint32_t stack = 0) {
  return {Requester::pim(0, stack), pa, AccessKind::Read, 64, t};
}

}  // namespace

TEST(TimingConfig, DefaultsKeepPaperRatios) {
  TimingConfig c;
  EXPECT_DOUBLE_EQ(c.pim_internal_bw, 4.0 * c.cpu_channel_bw);
  const double ratio = double(c.pim_dram_latency) / double(c.cpu_dram_latency);
  EXPECT_GE(ratio, 0.6);
  EXPECT_LE(ratio, 0.7);
  EXPECT_EQ(c.line_size, 64u);
}

TEST(TimingConfig, RejectsNonsense) {
  TimingConfig c;
  c.pim_dram_latency = 300;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.cpu_channel_bw = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.stack_count = 0;
  EXPECT_THROW(MemorySystem{c}, ConfigError);
}

TEST(MemorySystem, IdleCpuReadCostsOneLatency) {
  MemorySystem mem;
  const auto done = mem.submit(cpu_read(0x1000, 50));
  EXPECT_EQ(done.complete_time, 50u + 200u);
  EXPECT_TRUE(done.off_chip);
}

TEST(MemorySystem, PimReadIsCheaper) {
  MemorySystem mem;
  const auto cpu = mem.submit(cpu_read(0x1000));
  MemorySystem mem2;
  const auto pim = mem2.submit(pim_read(0x1000));
  EXPECT_EQ(pim.complete_time, 130u);
  EXPECT_DOUBLE_EQ(double(pim.complete_time) / double(cpu.complete_time), 0.65);
  EXPECT_LE(pim.complete_time, cpu.complete_time);
}

TEST(MemorySystem, BackToBackReadsOneSlotApart) {
  // Channel carries exactly one 64B line plus header per cycle.
  TimingConfig c;
  c.cpu_channel_bw = 72.0;
  MemorySystem mem(c);
  const auto a = mem.submit(cpu_read(0x1000));
  const auto b = mem.submit(cpu_read(0x1040));
  EXPECT_EQ(b.complete_time - a.complete_time, 1u);

  // Default channel: ceil(72 / 6.4) = 12 cycles per line.
  MemorySystem def;
  const auto x = def.submit(cpu_read(0x1000));
  const auto y = def.submit(cpu_read(0x1040));
  EXPECT_EQ(y.complete_time - x.complete_time, 12u);
}

TEST(MemorySystem, OffChipCounterCountsHeaders) {
  MemorySystem mem;
  EXPECT_EQ(mem.off_chip_traffic(), 0u);
  mem.submit(cpu_read(0x1000));
  EXPECT_EQ(mem.off_chip_traffic(), 64u + 8u);
  EXPECT_EQ(mem.off_chip_bytes(TrafficClass::Demand), 72u);
  mem.submit(pim_read(0x2000));
  EXPECT_EQ(mem.off_chip_traffic(), 72u);
  EXPECT_EQ(mem.internal_traffic(), 64u);
  mem.send_message(0, 0, TrafficClass::Coherence);
  mem.send_payload(0, 256, TrafficClass::Signature);
  EXPECT_EQ(mem.off_chip_traffic(), 72u + 8u + 256u);
  EXPECT_EQ(mem.message_count(), 1u);
}

TEST(MemorySystem, ConservationOverRandomRequests) {
  MemorySystem mem;
  Rng rng(7);
  std::uint64_t expect_off = 0, expect_in = 0, last_total = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto size = static_cast<std::uint32_t>(rng.between(1, 256));
    const bool cpu = rng.chance(0.5);
    const Cycle t = rng.below(100000);
    const AccessRequest r{cpu ? Requester::cpu(1) : Requester::pim(2), 64 * rng.below(1 << 20), AccessKind::Read,
                          size, t};
    const auto done = mem.submit(r);
    EXPECT_GE(done.complete_time, t + (cpu ? 200u : 130u));
    (cpu ? expect_off : expect_in) += size + (cpu ? 8 : 0);
    EXPECT_GE(mem.total_bytes_moved(), last_total);
    last_total = mem.total_bytes_moved();
  }
  EXPECT_EQ(mem.off_chip_traffic(), expect_off);
  EXPECT_EQ(mem.internal_traffic(), expect_in);
}

TEST(MemorySystem, UnmappedAddressFaults) {
  MemorySystem mem;
  EXPECT_THROW(mem.submit(cpu_read(phys::make(3, 0x40))), AddressFault);
  try {
    mem.submit(cpu_read(1ULL << 40));
    FAIL();
  } catch (const AddressFault& e) {
    EXPECT_NE(std::string(e.what()).find("0x"), std::string::npos);
  }
  AccessRequest zero = cpu_read(0);
  zero.size_bytes = 0;
  EXPECT_THROW(mem.submit(zero), SimError);
}

TEST(MemorySystem, AddressFieldsStayInRange) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const PhysAddr pa = phys::make(static_cast<std::uint32_t>(rng.below(4)), rng.next());
    EXPECT_LT(phys::stack_of(pa), 4u);
    EXPECT_LT(phys::vault_of(pa), 16u);
    EXPECT_LT(phys::bank_of(pa), 16u);
  }
  // Consecutive lines interleave across vaults.
  EXPECT_EQ(phys::vault_of(0x40), 1u);
  EXPECT_EQ(phys::vault_of(0x80), 2u);
}

TEST(Placement, CrossStackPimAccessIsOffChip) {
  TimingConfig c;
  c.stack_count = 2;
  MemorySystem mem(c);
  const PhysAddr on0 = mem.allocate_frames(0, 4096, 4096);
  const auto local = mem.submit(pim_read(on0, 0, 0));
  EXPECT_FALSE(local.off_chip);
  EXPECT_EQ(mem.off_chip_traffic(), 0u);
  const auto remote = mem.submit(pim_read(on0, 0, 1));
  EXPECT_TRUE(remote.off_chip);
  EXPECT_EQ(mem.off_chip_traffic(), 72u);
}

TEST(Placement, RemapToOtherStackRefused) {
  TimingConfig c;
  c.stack_count = 2;
  MemorySystem mem(c);
  mem.map_region_to_stack(RegionId{0}, 1);
  EXPECT_NO_THROW(mem.map_region_to_stack(RegionId{0}, 1));
  EXPECT_THROW(mem.map_region_to_stack(RegionId{0}, 0), RemapRefused);
  EXPECT_THROW(mem.map_region_to_stack(RegionId{1}, 2), ConfigError);
}

TEST(Placement, RegionsOfOneApplicationShareAStack) {
  TimingConfig c;
  c.stack_count = 4;
  MemorySystem mem(c);
  PimAddressSpace space(mem);
  const auto a = space.create_region(1 << 20);
  const auto b = space.create_region(1 << 20);
  EXPECT_EQ(mem.stack_of_region(a.id), mem.stack_of_region(b.id));
  EXPECT_EQ(phys::stack_of(space.rpt().walk(a.base).pa), phys::stack_of(space.rpt().walk(b.base).pa));
}

TEST(Placement, KernelBodyOnOwnStackHasNoOffChipBytes) {
  MemorySystem mem;
  PimAddressSpace space(mem);
  const auto r = space.create_region(1 << 16);
  const std::uint64_t before = mem.off_chip_traffic();
  for (VirtAddr off = 0; off < (1 << 16); off += 64) mem.submit(pim_read(space.rpt().walk(r.base + off).pa));
  EXPECT_EQ(mem.off_chip_traffic() - before, 0u);
}
