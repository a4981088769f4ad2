#pragma once

// Virtual address translation for in-memory accelerators: the region-based
// page table (region table -> flat 2MB table -> small 4KB table), a baseline
// four-level radix table, and a small fully-associative TLB.

#include <array>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pimbench/common.hpp"
#include "pimbench/memsys.hpp"

namespace pimbench {

enum class PageSize : std::uint8_t { Small4K, Large2M };

constexpr unsigned page_shift(PageSize s) { return s == PageSize::Small4K ? 12 : 21; }
constexpr std::uint64_t page_bytes(PageSize s) { return 1ULL << page_shift(s); }

inline constexpr unsigned kVaBits = 48;

struct RegionDescriptor {
  RegionId id{};
  VirtAddr base = 0;
  std::uint64_t size = 0;
  PageSize leaf = PageSize::Small4K;
  std::uint32_t stack = 0;

  bool contains(VirtAddr va) const { return va >= base && va - base < size; }
};

/// One page-table memory access performed during a walk.
struct WalkAccess {
  PhysAddr pa = 0;
  std::uint8_t level = 0;
};

struct Translation {
  PhysAddr pa = 0;
  PageSize page = PageSize::Small4K;
  bool tlb_hit = false;
  std::vector<WalkAccess> walk;
};

class RegionPageTable {
 public:
  static constexpr unsigned kRegionShift = 41;
  static constexpr unsigned kFlatShift = 21;
  static constexpr unsigned kSmallShift = 12;
  static constexpr std::size_t kMaxRegions = 128;
  static constexpr std::size_t kFlatEntries = 1u << 20;
  static constexpr std::size_t kSmallEntries = 512;
  static constexpr std::uint64_t kRegionSpan = 1ULL << kRegionShift;
  /// Per region-table entry: 1B index/valid tag, 8B flat-table base, 8B limit.
  static constexpr std::size_t kRegionEntryBytes = 17;

  explicit RegionPageTable(MemorySystem& mem) : mem_(&mem) {}

  /// Reserves the next region slot. Table storage is created on first map.
  RegionDescriptor allocate_region(std::uint64_t size, PageSize leaf = PageSize::Small4K, std::uint32_t stack = 0);

  /// Maps the page containing `va` to `frame`. A flat entry holds either a
  /// large frame or a small table, never both.
  void map_page(VirtAddr va, PhysAddr frame, PageSize size);

  /// Table walk with the region table treated as resident.
  Translation walk(VirtAddr va) const;

  const RegionDescriptor& region_of(VirtAddr va) const;
  const std::vector<RegionDescriptor>& regions() const { return regions_; }
  std::size_t region_table_footprint() const { return regions_.size() * kRegionEntryBytes; }

  nlohmann::json mapping_dump() const;

  struct Indices {
    std::uint32_t region;
    std::uint32_t flat;
    std::uint32_t small;
    std::uint32_t offset;
  };
  static constexpr Indices split(VirtAddr va) {
    return {static_cast<std::uint32_t>((va >> kRegionShift) & 0x7F),
            static_cast<std::uint32_t>((va >> kFlatShift) & 0xFFFFF),
            static_cast<std::uint32_t>((va >> kSmallShift) & 0x1FF), static_cast<std::uint32_t>(va & 0xFFF)};
  }

 private:
  struct LargeFrame {
    PhysAddr base;
  };
  struct SmallTableRef {
    std::uint32_t index;
  };
  using FlatEntry = std::variant<std::monostate, LargeFrame, SmallTableRef>;

  struct FlatTable {
    PhysAddr base = 0;
    std::unordered_map<std::uint32_t, FlatEntry> entries;
  };
  struct SmallTable {
    PhysAddr base = 0;
    std::array<PhysAddr, kSmallEntries> frames{};  // 0 = unmapped
  };

  FlatTable& flat_table_for(const RegionDescriptor& region);

  MemorySystem* mem_;
  std::vector<RegionDescriptor> regions_;
  std::vector<std::optional<FlatTable>> flat_;
  std::vector<SmallTable> small_;
};

/// Conventional radix table: four 512-entry levels over va[47:12].
class FourLevelPageTable {
 public:
  FourLevelPageTable(MemorySystem& mem, std::uint32_t stack = 0);

  void map_page(VirtAddr va, PhysAddr frame);
  Translation walk(VirtAddr va) const;

 private:
  struct Node {
    PhysAddr base = 0;
    std::array<std::uint64_t, 512> next{};  // child node index + 1, or leaf frame
  };

  static std::uint32_t index_at(VirtAddr va, int level) {
    return static_cast<std::uint32_t>((va >> (39 - 9 * level)) & 0x1FF);
  }

  MemorySystem* mem_;
  std::uint32_t stack_;
  std::vector<Node> nodes_;
};

class PimTlb {
 public:
  explicit PimTlb(std::size_t entries = 32) : entries_(entries) {}

  std::optional<Translation> lookup(VirtAddr va);
  void insert(VirtAddr va, PhysAddr pa, PageSize size);
  /// Drops every entry covering the region; returns how many were dropped.
  std::size_t shootdown(RegionId region);
  void clear();

  std::size_t capacity() const { return entries_.size(); }
  std::size_t occupancy() const;

 private:
  struct Entry {
    bool valid = false;
    VirtAddr vpage = 0;
    PhysAddr frame = 0;
    PageSize size = PageSize::Small4K;
    std::uint64_t last_use = 0;
  };
  std::vector<Entry> entries_;
  std::uint64_t tick_ = 0;
};

enum class PageTableKind : std::uint8_t { Rpt, FourLevel };

struct TranslationStats {
  std::uint64_t translations = 0;
  std::uint64_t tlb_hits = 0;
  std::uint64_t tlb_misses = 0;
  std::uint64_t walk_accesses = 0;
};

/// TLB in front of one of the two page-table organizations.
class AddressTranslator {
 public:
  AddressTranslator(const RegionPageTable& rpt, const FourLevelPageTable& four_level, std::size_t tlb_entries = 32,
                    PageTableKind kind = PageTableKind::Rpt)
      : rpt_(&rpt), four_level_(&four_level), tlb_(tlb_entries), kind_(kind) {}

  Translation translate(VirtAddr va, bool tlb_enabled = true);
  Translation translate_rpt(VirtAddr va, bool tlb_enabled = true);
  Translation translate_4level(VirtAddr va) const { return four_level_->walk(va); }

  std::size_t tlb_shootdown(RegionId region) { return tlb_.shootdown(region); }
  PimTlb& tlb() { return tlb_; }
  PageTableKind kind() const { return kind_; }
  const TranslationStats& stats() const { return stats_; }

 private:
  Translation translate_with(VirtAddr va, bool tlb_enabled, PageTableKind kind);

  const RegionPageTable* rpt_;
  const FourLevelPageTable* four_level_;
  PimTlb tlb_;
  PageTableKind kind_;
  TranslationStats stats_;
};

/// Owns both page tables for an application and keeps their mappings
/// identical. Regions are pinned to one stack along with their tables.
class PimAddressSpace {
 public:
  explicit PimAddressSpace(MemorySystem& mem, std::uint32_t table_stack = 0)
      : mem_(&mem), rpt_(mem), four_level_(mem, table_stack) {}

  /// Allocates a region and backs all of it with freshly allocated frames.
  RegionDescriptor create_region(std::uint64_t size, PageSize leaf = PageSize::Small4K, std::uint32_t stack = 0);

  RegionPageTable& rpt() { return rpt_; }
  const RegionPageTable& rpt() const { return rpt_; }
  const FourLevelPageTable& four_level() const { return four_level_; }

 private:
  MemorySystem* mem_;
  RegionPageTable rpt_;
  FourLevelPageTable four_level_;
};

}  // namespace pimbench
