#include <gtest/gtest.h>

#include <map>

#include "pimbench/rng.hpp"
#include "pimbench/rpt.hpp"

using namespace pimbench;

TEST(RegionPageTable, FirstRegionIsAlignedAndNumberedZero) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  const auto r = rpt.allocate_region(1 << 20);
  EXPECT_EQ(to_index(r.id), 0u);
  EXPECT_EQ(r.base & ((1ULL << 41) - 1), 0u);
  const auto r2 = rpt.allocate_region(1 << 20);
  EXPECT_EQ(to_index(r2.id), 1u);
  EXPECT_EQ(r2.base, 1ULL << 41);
}

TEST(RegionPageTable, FourRegionsFitIn68Bytes) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  for (int i = 0; i < 4; ++i) rpt.allocate_region(4096);
  EXPECT_EQ(rpt.region_table_footprint(), 68u);
}

TEST(RegionPageTable, RegionTableHoldsAtMost128) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  for (int i = 0; i < 128; ++i) rpt.allocate_region(4096);
  EXPECT_THROW(rpt.allocate_region(4096), AllocationRefused);
  EXPECT_EQ(rpt.regions().size(), 128u);
}

TEST(RegionPageTable, SplitUsesPaperBitFields) {
  const VirtAddr va = (5ULL << 41) | (0x12345ULL << 21) | (0x1ABULL << 12) | 0x9CD;
  const auto ix = RegionPageTable::split(va);
  EXPECT_EQ(ix.region, 5u);
  EXPECT_EQ(ix.flat, 0x12345u);
  EXPECT_EQ(ix.small, 0x1ABu);
  EXPECT_EQ(ix.offset, 0x9CDu);
}

TEST(RegionPageTable, LargePageZeroOffsetWalksOnce) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  const auto r = rpt.allocate_region(1 << 22, PageSize::Large2M);
  const PhysAddr f = mem.allocate_frames(0, 1 << 21, 1 << 21);
  rpt.map_page(r.base, f, PageSize::Large2M);
  const auto t = rpt.walk(r.base);
  EXPECT_EQ(t.pa, f);
  EXPECT_EQ(t.walk.size(), 1u);
  EXPECT_EQ(t.page, PageSize::Large2M);
  EXPECT_EQ(rpt.walk(r.base + 0x12345).pa, f + 0x12345);
}

TEST(RegionPageTable, SmallPageWalksTwice) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  const auto r = rpt.allocate_region(1 << 20);
  const PhysAddr f = mem.allocate_frames(0, 4096, 4096);
  rpt.map_page(r.base + 0x5000, f, PageSize::Small4K);
  const auto t = rpt.walk(r.base + 0x5123);
  EXPECT_EQ(t.walk.size(), 2u);
  EXPECT_EQ(t.walk[0].level, 1);
  EXPECT_EQ(t.walk[1].level, 2);
  EXPECT_EQ(t.pa, f + 0x123);
}

TEST(RegionPageTable, FlatEntryHoldsOneKind) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  const auto r = rpt.allocate_region(1 << 23);
  rpt.map_page(r.base, mem.allocate_frames(0, 1 << 21, 1 << 21), PageSize::Large2M);
  EXPECT_THROW(rpt.map_page(r.base + 0x1000, mem.allocate_frames(0, 4096, 4096), PageSize::Small4K), SimError);
  rpt.map_page(r.base + (1 << 21), mem.allocate_frames(0, 4096, 4096), PageSize::Small4K);
  EXPECT_THROW(rpt.map_page(r.base + (1 << 21), mem.allocate_frames(0, 1 << 21, 1 << 21), PageSize::Large2M),
               SimError);
}

TEST(RegionPageTable, FaultsOutsideMappings) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  const auto r = rpt.allocate_region(1 << 20);
  EXPECT_THROW(rpt.walk(r.base), PageFault);
  EXPECT_THROW(rpt.walk(r.base + (1 << 20)), NotPimRegion);
  EXPECT_THROW(rpt.walk(1ULL << 48), NotPimRegion);
  rpt.map_page(r.base, mem.allocate_frames(0, 4096, 4096), PageSize::Small4K);
  EXPECT_THROW(rpt.walk(r.base + 0x1000), PageFault);
}

TEST(RegionPageTable, RandomTranslationsMatchReferenceMap) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  Rng rng(11);
  std::map<VirtAddr, PhysAddr> ref;  // 4KB page -> frame
  std::vector<RegionDescriptor> regions;
  for (int i = 0; i < 3; ++i) regions.push_back(rpt.allocate_region(64ULL << 20));
  for (int i = 0; i < 3000; ++i) {
    const auto& r = regions[rng.below(regions.size())];
    const VirtAddr page = r.base + (rng.below(r.size >> 12) << 12);
    if (ref.count(page)) continue;
    const PhysAddr f = mem.allocate_frames(0, 4096, 4096);
    rpt.map_page(page, f, PageSize::Small4K);
    ref[page] = f;
  }
  std::vector<VirtAddr> pages;
  for (const auto& [p, _] : ref) pages.push_back(p);
  for (int i = 0; i < 10000; ++i) {
    const VirtAddr page = pages[rng.below(pages.size())];
    const VirtAddr va = page + rng.below(4096);
    const auto t = rpt.walk(va);
    ASSERT_EQ(t.pa, ref[page] + (va & 0xFFF));
    // pa = frame base + va mod frame size
    ASSERT_EQ(t.pa - (t.pa & ~0xFFFULL), va & 0xFFF);
  }
}

TEST(FourLevelPageTable, AlwaysWalksFourLevels) {
  MemorySystem mem;
  PimAddressSpace space(mem);
  const auto r = space.create_region(1 << 20);
  for (VirtAddr off = 0; off < (1 << 20); off += 4096 * 7) {
    const auto t = space.four_level().walk(r.base + off);
    EXPECT_EQ(t.walk.size(), 4u);
    EXPECT_EQ(t.pa, space.rpt().walk(r.base + off).pa);
  }
  EXPECT_THROW(space.four_level().walk(r.base + (2 << 20)), PageFault);
}

TEST(AddressSpace, BothTablesAgreeOverLargeLeaves) {
  MemorySystem mem;
  PimAddressSpace space(mem);
  const auto r = space.create_region(6 << 20, PageSize::Large2M);
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const VirtAddr va = r.base + rng.below(r.size);
    const auto a = space.rpt().walk(va);
    const auto b = space.four_level().walk(va);
    ASSERT_EQ(a.pa, b.pa);
    ASSERT_EQ(a.walk.size(), 1u);
  }
}

TEST(PimTlb, ShootdownDropsOnlyThatRegion) {
  PimTlb tlb(8);
  EXPECT_EQ(tlb.shootdown(RegionId{0}), 0u);
  const VirtAddr r = 1ULL << 41, s = 2ULL << 41;
  for (int i = 0; i < 3; ++i) tlb.insert(r + i * 4096, 0x100000 + i * 4096, PageSize::Small4K);
  for (int i = 0; i < 2; ++i) tlb.insert(s + i * 4096, 0x200000 + i * 4096, PageSize::Small4K);
  EXPECT_EQ(tlb.shootdown(RegionId{1}), 3u);
  EXPECT_EQ(tlb.occupancy(), 2u);
  EXPECT_TRUE(tlb.lookup(s + 4096 + 5).has_value());
  EXPECT_FALSE(tlb.lookup(r).has_value());
}

TEST(PimTlb, LeastRecentlyUsedIsReplaced) {
  PimTlb tlb(2);
  tlb.insert(0x1000, 0xA000, PageSize::Small4K);
  tlb.insert(0x2000, 0xB000, PageSize::Small4K);
  ASSERT_TRUE(tlb.lookup(0x1000));
  tlb.insert(0x3000, 0xC000, PageSize::Small4K);
  EXPECT_TRUE(tlb.lookup(0x1000));
  EXPECT_FALSE(tlb.lookup(0x2000));
  EXPECT_EQ(tlb.lookup(0x3008)->pa, 0xC008u);
}

TEST(AddressTranslator, WalksAgainAfterShootdown) {
  MemorySystem mem;
  PimAddressSpace space(mem);
  const auto r = space.create_region(1 << 16);
  AddressTranslator tr(space.rpt(), space.four_level(), 32);
  EXPECT_EQ(tr.translate(r.base + 64).walk.size(), 2u);
  const auto hit = tr.translate(r.base + 128);
  EXPECT_TRUE(hit.tlb_hit);
  EXPECT_TRUE(hit.walk.empty());
  EXPECT_EQ(tr.tlb_shootdown(r.id), 1u);
  EXPECT_FALSE(tr.translate(r.base + 128).walk.empty());
  EXPECT_EQ(tr.stats().translations, 3u);
  EXPECT_EQ(tr.stats().tlb_hits, 1u);
  EXPECT_EQ(tr.stats().walk_accesses, 4u);
}

TEST(AddressTranslator, RptHalvesWalkAccesses) {
  MemorySystem mem;
  PimAddressSpace space(mem);
  const auto r = space.create_region(8 << 20);
  AddressTranslator rpt(space.rpt(), space.four_level(), 0, PageTableKind::Rpt);
  AddressTranslator four(space.rpt(), space.four_level(), 0, PageTableKind::FourLevel);
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const VirtAddr va = r.base + rng.below(r.size);
    EXPECT_EQ(rpt.translate(va).pa, four.translate(va).pa);
  }
  EXPECT_DOUBLE_EQ(double(four.stats().walk_accesses) / double(rpt.stats().walk_accesses), 2.0);
}

TEST(RegionPageTable, MappingDumpListsRegions) {
  MemorySystem mem;
  RegionPageTable rpt(mem);
  rpt.allocate_region(4096);
  rpt.allocate_region(1 << 21, PageSize::Large2M);
  const auto dump = rpt.mapping_dump();
  ASSERT_EQ(dump.size(), 2u);
  EXPECT_EQ(dump[1]["leaf-size"], 1u << 21);
  EXPECT_EQ(dump[1]["va-base"], 1ULL << 41);
}
