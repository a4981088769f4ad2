#include "pimbench/memsys.hpp"

#include <algorithm>
#include <cmath>

namespace pimbench {

void TimingConfig::validate() const {
  if (cpu_dram_latency == 0 || pim_dram_latency == 0) throw ConfigError("DRAM latencies must be positive");
  if (pim_dram_latency > cpu_dram_latency) throw ConfigError("PIM latency must not exceed CPU latency");
  if (!(cpu_channel_bw > 0.0) || !(pim_internal_bw > 0.0)) throw ConfigError("bandwidths must be positive");
  if (line_size == 0 || (line_size & (line_size - 1)) != 0) throw ConfigError("line size must be a power of two");
  if (stack_count == 0 || stack_count > 16) throw ConfigError("stack count must be in [1, 16]");
}

MemorySystem::MemorySystem(TimingConfig config) : config_(config) {
  config_.validate();
  off_chip_.bandwidth = config_.cpu_channel_bw;
  internal_.resize(config_.stack_count);
  for (auto& ch : internal_) ch.bandwidth = config_.pim_internal_bw;
  // Keep frame 0 of every stack unused so that no structure lives at pa 0.
  next_frame_.assign(config_.stack_count, 1ULL << 21);
}

Cycle MemorySystem::slot_cycles(std::uint64_t bytes, double bw) {
  return static_cast<Cycle>(std::ceil(static_cast<double>(bytes) / bw));
}

Cycle MemorySystem::Channel::reserve(Cycle issue, std::uint64_t bytes) {
  const Cycle start = std::max(issue, next_free);
  next_free = start + slot_cycles(bytes, bandwidth);
  return start;
}

void MemorySystem::charge_off_chip(std::uint64_t bytes, TrafficClass cls) {
  off_chip_total_ += bytes;
  off_chip_by_class_[static_cast<std::size_t>(cls)] += bytes;
}

Completion MemorySystem::submit(const AccessRequest& req) {
  if (req.size_bytes == 0) throw SimError("memory request with zero size");
  const std::uint32_t stack = phys::stack_of(req.pa);
  if ((req.pa >> (phys::kStackShift + 4)) != 0 || stack >= config_.stack_count) throw AddressFault(req.pa);

  ++requests_[static_cast<std::size_t>(req.requester.kind)];
  Completion done;
  const bool remote = !req.requester.on_cpu() && req.requester.stack != stack;
  if (req.requester.on_cpu() || remote) {
    const std::uint64_t bytes = std::uint64_t{req.size_bytes} + config_.header_bytes;
    const Cycle start = off_chip_.reserve(req.issue_time, bytes);
    done.complete_time = start + config_.cpu_dram_latency;
    done.bytes_moved = bytes;
    done.off_chip = true;
    charge_off_chip(bytes, TrafficClass::Demand);
  } else {
    const Cycle start = internal_[stack].reserve(req.issue_time, req.size_bytes);
    done.complete_time = start + config_.pim_dram_latency;
    done.bytes_moved = req.size_bytes;
    internal_total_ += req.size_bytes;
  }
  return done;
}

Cycle MemorySystem::send_message(Cycle issue_time, std::uint32_t payload_bytes, TrafficClass cls) {
  const std::uint64_t bytes = std::uint64_t{payload_bytes} + config_.header_bytes;
  ++messages_;
  charge_off_chip(bytes, cls);
  return off_chip_.reserve(issue_time, bytes) + config_.link_latency();
}

Cycle MemorySystem::send_payload(Cycle issue_time, std::uint32_t payload_bytes, TrafficClass cls) {
  charge_off_chip(payload_bytes, cls);
  return off_chip_.reserve(issue_time, payload_bytes) + config_.link_latency();
}

PlacementRecord MemorySystem::map_region_to_stack(RegionId region, std::uint32_t stack) {
  if (stack >= config_.stack_count) throw ConfigError("stack " + std::to_string(stack) + " is not configured");
  auto [it, inserted] = placement_.try_emplace(to_index(region), stack);
  if (!inserted && it->second != stack) {
    throw RemapRefused("region " + std::to_string(to_index(region)) + " already pinned to stack " +
                       std::to_string(it->second));
  }
  return {region, stack};
}

std::optional<std::uint32_t> MemorySystem::stack_of_region(RegionId region) const {
  auto it = placement_.find(to_index(region));
  if (it == placement_.end()) return std::nullopt;
  return it->second;
}

PhysAddr MemorySystem::allocate_frames(std::uint32_t stack, std::uint64_t bytes, std::uint64_t align) {
  if (stack >= config_.stack_count) throw ConfigError("stack " + std::to_string(stack) + " is not configured");
  std::uint64_t& next = next_frame_[stack];
  const std::uint64_t base = (next + align - 1) / align * align;
  if (base + bytes > phys::kStackBytes) throw AllocationRefused("stack " + std::to_string(stack) + " out of memory");
  next = base + bytes;
  return phys::make(stack, base);
}

}  // namespace pimbench
