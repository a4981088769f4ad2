#pragma once

// Timing and traffic model for a CPU attached to one or more 3D-stacked
// memories. Latency is a fixed per-path constant; bandwidth is a per-channel
// token bucket (one off-chip channel, one internal channel per stack).

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "pimbench/common.hpp"

namespace pimbench {

struct TimingConfig {
  Cycle cpu_dram_latency = 200;
  Cycle pim_dram_latency = 130;
  // 12.8 GB/s and 51.2 GB/s at a 2 GHz reference clock.
  double cpu_channel_bw = 6.4;
  double pim_internal_bw = 25.6;
  std::uint32_t line_size = kLineBytes;
  std::uint32_t header_bytes = 8;
  std::uint32_t stack_count = 1;

  /// One-way cost of crossing the off-chip link.
  Cycle link_latency() const { return cpu_dram_latency - pim_dram_latency; }
  void validate() const;
};

/// Physical address layout: {stack:4 | row bits | bank:4 | vault:4 | line offset:6}.
/// Each stack owns a 4 GiB window; consecutive lines interleave across vaults.
namespace phys {
inline constexpr unsigned kStackShift = 32;
inline constexpr unsigned kVaultShift = 6;
inline constexpr unsigned kBankShift = 10;
inline constexpr std::uint64_t kStackBytes = 1ULL << kStackShift;

constexpr std::uint32_t stack_of(PhysAddr pa) { return static_cast<std::uint32_t>((pa >> kStackShift) & 0xF); }
constexpr std::uint32_t vault_of(PhysAddr pa) { return static_cast<std::uint32_t>((pa >> kVaultShift) & 0xF); }
constexpr std::uint32_t bank_of(PhysAddr pa) { return static_cast<std::uint32_t>((pa >> kBankShift) & 0xF); }
constexpr PhysAddr make(std::uint32_t stack, std::uint64_t local) {
  return (static_cast<PhysAddr>(stack) << kStackShift) | (local & (kStackBytes - 1));
}
}  // namespace phys

enum class RequesterKind : std::uint8_t { CpuCore, PimCore, PageWalker };

struct Requester {
  RequesterKind kind = RequesterKind::CpuCore;
  std::uint32_t id = 0;
  /// Stack hosting the requester; ignored for CPU cores.
  std::uint32_t stack = 0;

  static Requester cpu(std::uint32_t core) { return {RequesterKind::CpuCore, core, 0}; }
  static Requester pim(std::uint32_t core, std::uint32_t stack = 0) {
    return {RequesterKind::PimCore, core, stack};
  }
  static Requester walker(std::uint32_t owner, std::uint32_t stack = 0) {
    return {RequesterKind::PageWalker, owner, stack};
  }
  bool on_cpu() const { return kind == RequesterKind::CpuCore; }
};

struct AccessRequest {
  Requester requester;
  PhysAddr pa = 0;
  AccessKind kind = AccessKind::Read;
  std::uint32_t size_bytes = kLineBytes;
  Cycle issue_time = 0;
};

struct Completion {
  Cycle complete_time = 0;
  std::uint64_t bytes_moved = 0;
  bool off_chip = false;
};

/// What an off-chip byte was spent on.
enum class TrafficClass : std::uint8_t { Demand, Coherence, Signature, Packet };
inline constexpr std::size_t kTrafficClassCount = 4;

struct PlacementRecord {
  RegionId region;
  std::uint32_t stack;
};

class MemorySystem {
 public:
  explicit MemorySystem(TimingConfig config = {});

  const TimingConfig& config() const { return config_; }

  Completion submit(const AccessRequest& req);

  /// Charges an off-chip protocol message (header added) and returns its
  /// arrival time. Shares the token bucket with demand traffic.
  Cycle send_message(Cycle issue_time, std::uint32_t payload_bytes, TrafficClass cls);

  /// Charges a payload with no header of its own (it rides on a message
  /// already accounted for, e.g. signatures attached to a kernel-end notice).
  Cycle send_payload(Cycle issue_time, std::uint32_t payload_bytes, TrafficClass cls);

  std::uint64_t off_chip_traffic() const { return off_chip_total_; }
  std::uint64_t off_chip_bytes(TrafficClass cls) const { return off_chip_by_class_[static_cast<std::size_t>(cls)]; }
  std::uint64_t internal_traffic() const { return internal_total_; }
  std::uint64_t total_bytes_moved() const { return off_chip_total_ + internal_total_; }
  std::uint64_t request_count(RequesterKind kind) const { return requests_[static_cast<std::size_t>(kind)]; }
  std::uint64_t message_count() const { return messages_; }

  PlacementRecord map_region_to_stack(RegionId region, std::uint32_t stack);
  std::optional<std::uint32_t> stack_of_region(RegionId region) const;

  /// Bump-allocates `bytes` of physical memory in `stack`, aligned to `align`.
  PhysAddr allocate_frames(std::uint32_t stack, std::uint64_t bytes, std::uint64_t align);

  /// Cycles a transfer of `bytes` occupies a channel of `bw` bytes/cycle.
  static Cycle slot_cycles(std::uint64_t bytes, double bw);

 private:
  struct Channel {
    double bandwidth = 1.0;
    Cycle next_free = 0;
    // Returns the time the transfer may start.
    Cycle reserve(Cycle issue, std::uint64_t bytes);
  };

  void charge_off_chip(std::uint64_t bytes, TrafficClass cls);

  TimingConfig config_;
  Channel off_chip_;
  std::vector<Channel> internal_;
  std::vector<std::uint64_t> next_frame_;
  std::map<std::uint32_t, std::uint32_t> placement_;
  std::uint64_t off_chip_total_ = 0;
  std::uint64_t internal_total_ = 0;
  std::array<std::uint64_t, kTrafficClassCount> off_chip_by_class_{};
  std::array<std::uint64_t, 3> requests_{};
  std::uint64_t messages_ = 0;
};

}  // namespace pimbench
