#pragma once

// Bookkeeping side of the speculative coherence protocol: which lines are
// PIM data, what each kernel attempt read and wrote, and the batched
// conflict decision at kernel end. Cache and timing effects live in the
// System that drives this tracker.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "pimbench/common.hpp"
#include "pimbench/signature.hpp"

namespace pimbench {

/// Per-page flags marking memory allocated as PIM data.
class PimDataMap {
 public:
  static constexpr unsigned kLinesPerPageShift = 6;  // 4KB pages of 64B lines

  void add_lines(LineAddr first, std::uint64_t count);
  bool contains(LineAddr line) const { return pages_.count(line >> kLinesPerPageShift) != 0; }
  std::size_t page_count() const { return pages_.size(); }

 private:
  std::unordered_set<std::uint64_t> pages_;
};

/// Words whose mask bit is set come from `speculative`, the rest from `memory`.
LineData merge_commit_line(const LineData& memory, const LineData& speculative, std::uint8_t dirty_mask);

enum class OutcomeKind : std::uint8_t { Committed, RolledBack, LockedCommit };

const char* outcome_name(OutcomeKind k);

struct Checkpoint {
  std::size_t op_index = 0;
  std::uint64_t acc = 0;
};

struct AttemptSummary {
  std::uint32_t attempt = 0;
  OutcomeKind result = OutcomeKind::Committed;
  std::size_t conflict_lines = 0;
  bool exact_conflict = false;
  bool evicted = false;
  std::size_t read_links = 0;
  std::size_t write_links = 0;
  std::uint64_t flushed_lines = 0;
  std::uint64_t invalidations = 0;
  std::uint64_t control_messages = 0;
  /// Off-chip bytes spent on this attempt's coherence work.
  std::uint64_t bytes = 0;
  Cycle start = 0;
  Cycle end = 0;
};

struct KernelRecord {
  KernelId id{};
  std::uint32_t pim_core = 0;
  Checkpoint checkpoint;
  Signature read_set;
  Signature write_set;
  Signature cpu_write_set;
  /// Exact lines the CPU side holds dirty or has written during this
  /// attempt, plus lines other kernels committed meanwhile.
  std::unordered_set<LineAddr> conflict_candidates;
  std::uint32_t rollbacks = 0;
  std::uint32_t attempt = 0;
  bool locked_mode = false;
  bool active = false;
  std::vector<AttemptSummary> attempts;

  const std::optional<OutcomeKind>& outcome() const { return outcome_; }
  /// Throws InvariantViolation when called twice.
  void set_outcome(OutcomeKind kind);

 private:
  std::optional<OutcomeKind> outcome_;
};

struct FinishDecision {
  bool rollback = false;
  std::vector<LineAddr> matches;
  /// True read/write intersection, ignoring signature false positives.
  bool exact_conflict = false;
  std::size_t read_links = 1;
  std::size_t write_links = 1;
};

class LazyPimTracker {
 public:
  LazyPimTracker(const PimDataMap& map, std::uint64_t seed, std::uint32_t max_rollbacks = 3)
      : map_(&map), seed_(seed), max_rollbacks_(max_rollbacks) {}

  /// Opens the first attempt. `cpu_dirty` lists the CPU's dirty lines; only
  /// PIM-data lines among them are recorded.
  KernelRecord& start_kernel(KernelId id, std::uint32_t pim_core, std::uint64_t acc_init,
                             std::span<const LineAddr> cpu_dirty);

  void record_cpu_write(LineAddr line);
  void record_pim_read(KernelId id, LineAddr line);
  void record_pim_write(KernelId id, LineAddr line);
  /// Lines merged into memory by another kernel's commit.
  void record_remote_commit(KernelId committer, std::span<const LineAddr> lines);

  /// Batched conflict check. Attempts running with line locks never conflict.
  FinishDecision finish_kernel(KernelId id) const;

  /// Closes the attempt as rolled back and opens the next one.
  void rollback(KernelId id, std::span<const LineAddr> cpu_dirty);
  void commit(KernelId id);

  bool needs_locks(KernelId id) const { return record(id).rollbacks >= max_rollbacks_; }
  std::uint32_t max_rollbacks() const { return max_rollbacks_; }

  KernelRecord& record(KernelId id);
  const KernelRecord& record(KernelId id) const;
  const std::map<std::uint32_t, KernelRecord>& records() const { return records_; }
  const PimDataMap& map() const { return *map_; }

 private:
  void open_attempt(KernelRecord& rec, std::span<const LineAddr> cpu_dirty);
  std::uint64_t signature_seed(const KernelRecord& rec, std::uint32_t which) const;

  const PimDataMap* map_;
  std::uint64_t seed_;
  std::uint32_t max_rollbacks_;
  std::map<std::uint32_t, KernelRecord> records_;
};

}  // namespace pimbench
