#pragma once

// Directory-side MESI: the per-line entry and its transition function.
// Callers own the caches; the directory only decides states and messages.

#include <cstdint>
#include <vector>

#include "pimbench/common.hpp"

namespace pimbench {

enum class Mesi : std::uint8_t { I, S, E, M };

char mesi_char(Mesi s);

/// Request arriving at the directory from one cache.
enum class DirRequest : std::uint8_t { Read, Write, Evict };

enum class MsgKind : std::uint8_t {
  Request,      // requester -> directory
  Fill,         // memory -> requester
  Forward,      // directory -> current owner
  OwnerData,    // owner -> requester, cache to cache
  Invalidate,   // directory -> sharer (acknowledged)
  Writeback,    // cache -> memory, carries the line
  EvictNotice,  // clean copy dropped
};

struct DirMessage {
  MsgKind kind;
  std::uint32_t cache;  // requester or the peer the message goes to

  bool operator==(const DirMessage&) const = default;
};

inline constexpr std::uint32_t kMaxDirectoryCaches = 64;

struct DirectoryEntry {
  /// Summary: I = no copies, S = one or more sharers, E/M = single owner.
  Mesi state = Mesi::I;
  std::uint64_t holders = 0;
  bool locked = false;

  bool holds(std::uint32_t cache) const { return (holders >> cache) & 1; }
  Mesi state_of(std::uint32_t cache) const { return holds(cache) ? state : Mesi::I; }
  /// Only meaningful in E or M.
  std::uint32_t owner() const;
  std::uint32_t holder_count() const;

  bool operator==(const DirectoryEntry&) const = default;
};

struct Transition {
  DirectoryEntry next;
  std::vector<DirMessage> messages;
  /// Satisfied without involving the directory (including silent E->M).
  bool local_hit = false;
};

/// Canonical MESI directory step. Throws ProtocolViolation for an entry
/// that breaks single-writer/multiple-reader or an illegal request.
Transition directory_transition(const DirectoryEntry& current, std::uint32_t requester, DirRequest request);

/// Throws ProtocolViolation if the entry is internally inconsistent.
void check_entry(const DirectoryEntry& entry);

}  // namespace pimbench
