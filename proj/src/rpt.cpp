#include "pimbench/rpt.hpp"

#include <algorithm>

namespace pimbench {

namespace {

void check_canonical(VirtAddr va) {
  if ((va >> kVaBits) != 0) throw NotPimRegion(va);
}

}  // namespace

RegionDescriptor RegionPageTable::allocate_region(std::uint64_t size, PageSize leaf, std::uint32_t stack) {
  if (size == 0 || size > kRegionSpan) throw AllocationRefused("region size must be in (0, 2TB]");
  if (regions_.size() >= kMaxRegions) throw AllocationRefused("region table full");
  RegionDescriptor desc;
  desc.id = RegionId{static_cast<std::uint32_t>(regions_.size())};
  desc.base = static_cast<VirtAddr>(regions_.size()) << kRegionShift;
  desc.size = size;
  desc.leaf = leaf;
  desc.stack = stack;
  mem_->map_region_to_stack(desc.id, stack);
  regions_.push_back(desc);
  flat_.emplace_back();
  return desc;
}

const RegionDescriptor& RegionPageTable::region_of(VirtAddr va) const {
  check_canonical(va);
  const auto idx = split(va).region;
  if (idx >= regions_.size() || !regions_[idx].contains(va)) throw NotPimRegion(va);
  return regions_[idx];
}

RegionPageTable::FlatTable& RegionPageTable::flat_table_for(const RegionDescriptor& region) {
  auto& slot = flat_[to_index(region.id)];
  if (!slot) {
    slot.emplace();
    slot->base = mem_->allocate_frames(region.stack, kFlatEntries * 8, page_bytes(PageSize::Large2M));
  }
  return *slot;
}

void RegionPageTable::map_page(VirtAddr va, PhysAddr frame, PageSize size) {
  const RegionDescriptor& region = region_of(va);
  FlatTable& flat = flat_table_for(region);
  const Indices ix = split(va);
  FlatEntry& entry = flat.entries[ix.flat];

  if (size == PageSize::Large2M) {
    if (std::holds_alternative<SmallTableRef>(entry)) throw SimError("flat entry already holds a small table");
    entry = LargeFrame{frame & ~(page_bytes(PageSize::Large2M) - 1)};
    return;
  }
  if (std::holds_alternative<LargeFrame>(entry)) throw SimError("flat entry already holds a 2MB frame");
  if (std::holds_alternative<std::monostate>(entry)) {
    SmallTable table;
    table.base = mem_->allocate_frames(region.stack, kSmallEntries * 8, page_bytes(PageSize::Small4K));
    small_.push_back(table);
    entry = SmallTableRef{static_cast<std::uint32_t>(small_.size() - 1)};
  }
  small_[std::get<SmallTableRef>(entry).index].frames[ix.small] = frame & ~(page_bytes(PageSize::Small4K) - 1);
}

Translation RegionPageTable::walk(VirtAddr va) const {
  const RegionDescriptor& region = region_of(va);
  const Indices ix = split(va);
  Translation t;
  const auto& flat = flat_[to_index(region.id)];
  if (!flat) throw PageFault(va, region.id);
  t.walk.push_back({flat->base + std::uint64_t{ix.flat} * 8, 1});
  auto it = flat->entries.find(ix.flat);
  if (it == flat->entries.end() || std::holds_alternative<std::monostate>(it->second)) throw PageFault(va, region.id);

  if (const auto* large = std::get_if<LargeFrame>(&it->second)) {
    t.page = PageSize::Large2M;
    t.pa = large->base + (va & (page_bytes(PageSize::Large2M) - 1));
    return t;
  }
  const SmallTable& small = small_[std::get<SmallTableRef>(it->second).index];
  t.walk.push_back({small.base + std::uint64_t{ix.small} * 8, 2});
  const PhysAddr frame = small.frames[ix.small];
  if (frame == 0) throw PageFault(va, region.id);
  t.page = PageSize::Small4K;
  t.pa = frame + ix.offset;
  return t;
}

nlohmann::json RegionPageTable::mapping_dump() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : regions_) {
    out.push_back({{"region-id", to_index(r.id)},
                   {"va-base", r.base},
                   {"size", r.size},
                   {"leaf-size", page_bytes(r.leaf)},
                   {"stack", r.stack}});
  }
  return out;
}

FourLevelPageTable::FourLevelPageTable(MemorySystem& mem, std::uint32_t stack) : mem_(&mem), stack_(stack) {
  Node root;
  root.base = mem_->allocate_frames(stack_, 4096, 4096);
  nodes_.push_back(root);
}

void FourLevelPageTable::map_page(VirtAddr va, PhysAddr frame) {
  check_canonical(va);
  std::size_t node = 0;
  for (int level = 0; level < 3; ++level) {
    const auto idx = index_at(va, level);
    if (nodes_[node].next[idx] == 0) {
      Node child;
      child.base = mem_->allocate_frames(stack_, 4096, 4096);
      nodes_.push_back(child);
      nodes_[node].next[idx] = nodes_.size();  // index + 1
    }
    node = nodes_[node].next[idx] - 1;
  }
  nodes_[node].next[index_at(va, 3)] = frame & ~0xFFFULL;
}

Translation FourLevelPageTable::walk(VirtAddr va) const {
  check_canonical(va);
  const RegionId region{static_cast<std::uint32_t>(va >> RegionPageTable::kRegionShift)};
  Translation t;
  std::size_t node = 0;
  for (int level = 0; level < 4; ++level) {
    const auto idx = index_at(va, level);
    t.walk.push_back({nodes_[node].base + std::uint64_t{idx} * 8, static_cast<std::uint8_t>(level + 1)});
    const std::uint64_t next = nodes_[node].next[idx];
    if (next == 0) throw PageFault(va, region);
    if (level == 3) {
      t.pa = next + (va & 0xFFF);
      return t;
    }
    node = next - 1;
  }
  return t;
}

std::optional<Translation> PimTlb::lookup(VirtAddr va) {
  for (auto& e : entries_) {
    if (e.valid && (va >> page_shift(e.size)) == e.vpage) {
      e.last_use = ++tick_;
      Translation t;
      t.tlb_hit = true;
      t.page = e.size;
      t.pa = e.frame + (va & (page_bytes(e.size) - 1));
      return t;
    }
  }
  return std::nullopt;
}

void PimTlb::insert(VirtAddr va, PhysAddr pa, PageSize size) {
  if (entries_.empty()) return;
  auto victim = std::find_if(entries_.begin(), entries_.end(), [](const Entry& e) { return !e.valid; });
  if (victim == entries_.end()) {
    victim = std::min_element(entries_.begin(), entries_.end(),
                              [](const Entry& a, const Entry& b) { return a.last_use < b.last_use; });
  }
  victim->valid = true;
  victim->vpage = va >> page_shift(size);
  victim->frame = pa & ~(page_bytes(size) - 1);
  victim->size = size;
  victim->last_use = ++tick_;
}

std::size_t PimTlb::shootdown(RegionId region) {
  std::size_t dropped = 0;
  for (auto& e : entries_) {
    if (!e.valid) continue;
    const VirtAddr base = e.vpage << page_shift(e.size);
    if ((base >> RegionPageTable::kRegionShift) == to_index(region)) {
      e.valid = false;
      ++dropped;
    }
  }
  return dropped;
}

void PimTlb::clear() {
  for (auto& e : entries_) e.valid = false;
}

std::size_t PimTlb::occupancy() const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const Entry& e) { return e.valid; }));
}

Translation AddressTranslator::translate_with(VirtAddr va, bool tlb_enabled, PageTableKind kind) {
  ++stats_.translations;
  if (tlb_enabled) {
    if (auto hit = tlb_.lookup(va)) {
      ++stats_.tlb_hits;
      return *hit;
    }
  }
  ++stats_.tlb_misses;
  Translation t = kind == PageTableKind::Rpt ? rpt_->walk(va) : four_level_->walk(va);
  stats_.walk_accesses += t.walk.size();
  if (tlb_enabled) tlb_.insert(va, t.pa, t.page);
  return t;
}

Translation AddressTranslator::translate(VirtAddr va, bool tlb_enabled) { return translate_with(va, tlb_enabled, kind_); }

Translation AddressTranslator::translate_rpt(VirtAddr va, bool tlb_enabled) {
  return translate_with(va, tlb_enabled, PageTableKind::Rpt);
}

RegionDescriptor PimAddressSpace::create_region(std::uint64_t size, PageSize leaf, std::uint32_t stack) {
  RegionDescriptor region = rpt_.allocate_region(size, leaf, stack);
  const std::uint64_t step = page_bytes(leaf);
  const std::uint64_t mapped = (size + step - 1) / step * step;
  for (std::uint64_t off = 0; off < mapped; off += step) {
    const PhysAddr frame = mem_->allocate_frames(stack, step, step);
    rpt_.map_page(region.base + off, frame, leaf);
    for (std::uint64_t sub = 0; sub < step; sub += 4096) four_level_.map_page(region.base + off + sub, frame + sub);
  }
  return region;
}

}  // namespace pimbench
