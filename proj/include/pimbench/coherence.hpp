#pragma once

// CPU + PIM system under one coherence mechanism: private CPU L1s, a shared
// inclusive L2, per-core PIM L1s, a MESI directory on the CPU side, and the
// mechanism-specific handling of PIM data. Agents execute their operation
// streams one access at a time; the agent with the earliest clock goes next
// and ties are broken by a seeded draw.

#include <array>
#include <bit>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pimbench/assoc_cache.hpp"
#include "pimbench/common.hpp"
#include "pimbench/lazypim.hpp"
#include "pimbench/memsys.hpp"
#include "pimbench/mesi.hpp"
#include "pimbench/rng.hpp"
#include "pimbench/workloads.hpp"

namespace pimbench {

enum class Mechanism : std::uint8_t { CpuOnly, FG, CG, NC, LazyPim, Ideal };

inline constexpr std::array<Mechanism, 6> kAllMechanisms = {Mechanism::CpuOnly, Mechanism::FG, Mechanism::CG,
                                                            Mechanism::NC, Mechanism::LazyPim, Mechanism::Ideal};

std::string_view mechanism_name(Mechanism m);
/// Accepts the config spellings: cpu-only, fg, cg, nc, lazypim, ideal.
Mechanism parse_mechanism(std::string_view name);

struct SystemConfig {
  Mechanism mechanism = Mechanism::LazyPim;
  TimingConfig timing;
  std::size_t cpu_l1_bytes = 64 * 1024;
  std::size_t cpu_l1_ways = 4;
  std::size_t l2_bytes = 2 * 1024 * 1024;
  std::size_t l2_ways = 8;
  std::size_t pim_l1_bytes = 64 * 1024;
  std::size_t pim_l1_ways = 4;
  Cycle l1_cycles = 2;
  Cycle l2_cycles = 20;
  std::uint32_t max_rollbacks = 3;
  std::uint64_t seed = 1;
  /// Run the SWMR/directory checks every this many events (1 = always).
#ifdef NDEBUG
  std::uint64_t check_interval = 1024;
#else
  std::uint64_t check_interval = 1;
#endif

  void validate() const;
};

struct LogEntry {
  enum class Kind : std::uint8_t { CpuRead, CpuWrite, PimRead, PimWrite, AttemptStart, Rollback, Commit };
  /// Rollback entries carry their cause in `value`.
  static constexpr std::uint64_t kRollbackConflict = 0;
  static constexpr std::uint64_t kRollbackEviction = 1;
  static constexpr std::uint64_t kRollbackLockConflict = 2;

  Kind kind;
  std::uint32_t agent = 0;
  KernelId kernel{};
  std::uint32_t attempt = 0;
  LineAddr line = 0;
  std::uint8_t word = 0;
  std::uint64_t value = 0;
  Cycle time = 0;
};

struct CoherenceStats {
  Cycle makespan = 0;
  Cycle cpu_finish = 0;
  Cycle pim_finish = 0;
  std::uint64_t cpu_l1_hits = 0;
  std::uint64_t cpu_l1_misses = 0;
  std::uint64_t l2_hits = 0;
  std::uint64_t l2_misses = 0;
  std::uint64_t pim_l1_hits = 0;
  std::uint64_t pim_l1_misses = 0;
  std::uint64_t uncached_accesses = 0;
  std::uint64_t blocked_cycles = 0;
  std::uint64_t flushed_lines = 0;
  std::uint64_t invalidations = 0;
  std::uint64_t kernels = 0;
  std::uint64_t commits = 0;
  std::uint64_t locked_commits = 0;
  std::uint64_t rollbacks = 0;
  std::uint64_t false_positive_rollbacks = 0;
  std::uint64_t eviction_rollbacks = 0;
  std::uint64_t lock_conflict_rollbacks = 0;
  std::uint64_t events = 0;
};

struct FlushReport {
  std::uint64_t lines_flushed = 0;
  std::uint64_t lines_invalidated = 0;
  Cycle done = 0;
};

struct AccessResult {
  Cycle done = 0;
  std::uint64_t value = 0;
  /// Speculative access displaced a speculative line; the attempt must restart.
  bool aborted = false;
};

class System {
 public:
  System(SystemConfig config, const CoherenceWorkload& workload);

  /// Runs every agent to completion. Throws InvariantViolation on deadlock
  /// or a failed periodic check.
  void run();

  /// One CPU-side access by directory cache `cache` (CPU cores first, then
  /// the extra kernel cores of the CPU-only arm).
  AccessResult cpu_access(std::uint32_t cache, LineAddr line, std::uint8_t word, AccessKind kind,
                          std::uint64_t value, Cycle t);
  /// Fine-grained (or zero-cost) coherent access from a PIM core.
  AccessResult pim_access_fg(std::uint32_t pim_core, LineAddr line, std::uint8_t word, AccessKind kind,
                             std::uint64_t value, Cycle t);
  /// Coarse-grained lock over all PIM data; refuses nested acquires.
  FlushReport cg_acquire(Cycle t);
  void cg_release(Cycle t);

  const SystemConfig& config() const { return config_; }
  const CoherenceStats& stats() const { return stats_; }
  const MemorySystem& memory() const { return mem_; }
  const std::vector<LogEntry>& log() const { return log_; }
  const LazyPimTracker* tracker() const { return tracker_ ? &*tracker_ : nullptr; }
  const PimDataMap& pim_map() const { return map_; }

  /// Architectural value of a line: newest committed copy anywhere.
  LineData value_of(LineAddr line) const;
  std::map<LineAddr, LineData> final_memory() const;

  Mesi cache_state(std::uint32_t cache, LineAddr line) const;
  const DirectoryEntry* directory_entry(LineAddr line) const;
  bool l2_dirty(LineAddr line) const;

  /// SWMR, directory/cache agreement and L2 inclusion.
  void check_invariants() const;

  /// JSON lines, one per speculative kernel.
  std::string kernel_log_json_lines() const;

 private:
  struct Empty {};
  struct L2Meta {
    bool dirty = false;
    LineData data{};
  };
  struct PimMeta {
    LineData data{};
    bool speculative = false;
    std::uint8_t dirty_mask = 0;
  };

  struct CpuAgent {
    std::size_t next = 0;
    Cycle ready = 0;
    bool blocked = false;
    Cycle blocked_since = 0;
  };

  struct PimAgent {
    std::deque<std::size_t> queue;
    std::optional<std::size_t> current;
    std::size_t op = 0;
    std::uint64_t acc = 0;
    std::uint32_t attempt = 0;
    Cycle ready = 0;
    Cycle attempt_start = 0;
    bool blocked = false;
    bool starting = false;
    /// Speculative lines evicted while the attempt holds line locks.
    std::unordered_map<LineAddr, PimMeta> victims;
    std::unordered_set<LineAddr> lock_request;
    std::uint64_t lock_flushed = 0;
    std::uint64_t lock_bytes = 0;
    AttemptSummary pending_summary;
    std::uint64_t pending_bytes = 0;
  };

  bool is_pim_cache(std::uint32_t cache) const;
  std::uint32_t cpu_cache_count() const;
  std::uint32_t pim_cache_index(std::uint32_t core) const { return workload_->cpu_cores + core; }

  LineData& dram(LineAddr line);
  LineData dram_value(LineAddr line) const;
  Requester cpu_port() const { return Requester::cpu(0); }
  Requester pim_port(std::uint32_t core) const { return Requester::pim(core, 0); }
  static PhysAddr pa_of(LineAddr line) { return line * kLineBytes; }

  Cycle coherence_message(Cycle t, std::uint32_t payload);
  Cycle writeback_l2(LineAddr line, Cycle t, TrafficClass cls);
  void drop_cpu_copies(LineAddr line);
  Cycle fill_l2(LineAddr line, Cycle t, bool supplied = false);
  void install_cpu_l1(std::uint32_t cache, LineAddr line);
  void evict_pim_line(std::uint32_t core, SetAssociativeCache<PimMeta>::Line& victim, Cycle t);
  Cycle resolve_peers(const Transition& tr, std::uint32_t requester, LineAddr line, DirRequest req, Cycle t);
  void pim_gains_copy(LineAddr line, bool exclusive, Cycle& t);

  AccessResult pim_access_plain(std::uint32_t core, LineAddr line, std::uint8_t word, AccessKind kind,
                                std::uint64_t value, Cycle t);
  AccessResult pim_access_speculative(std::uint32_t core, LineAddr line, std::uint8_t word, AccessKind kind,
                                      std::uint64_t value, Cycle t);
  AccessResult nc_access(LineAddr line, std::uint8_t word, AccessKind kind, std::uint64_t value, Cycle t);

  std::vector<LineAddr> cpu_dirty_pim_lines() const;
  std::vector<LineAddr> dirty_pim_lines_in(const std::unordered_set<LineAddr>& lines) const;

  void step_cpu(std::uint32_t core);
  void step_pim(std::uint32_t core);
  void start_kernel(std::uint32_t core, Cycle t);
  void begin_attempt(std::uint32_t core, Cycle t);
  void finish_kernel(std::uint32_t core, Cycle t);
  void finish_speculative(std::uint32_t core, Cycle t);
  void rollback(std::uint32_t core, Cycle t, const std::vector<LineAddr>& flush, bool evicted, bool lock_conflict,
                const FinishDecision* decision);
  void acquire_line_locks(std::uint32_t core, Cycle t);
  void release_line_locks(Cycle t);
  void discard_pim_cache(std::uint32_t core);
  void wake_cpus(std::deque<std::uint32_t>& waiters, Cycle t);

  SystemConfig config_;
  const CoherenceWorkload* workload_;
  MemorySystem mem_;
  PimDataMap map_;
  std::optional<LazyPimTracker> tracker_;
  Rng sched_rng_;

  std::vector<SetAssociativeCache<Empty>> cpu_l1_;
  SetAssociativeCache<L2Meta> l2_;
  std::vector<SetAssociativeCache<PimMeta>> pim_l1_;
  std::unordered_map<LineAddr, DirectoryEntry> dir_;
  std::unordered_map<LineAddr, LineData> dram_;

  std::vector<CpuAgent> cpus_;
  std::vector<PimAgent> pims_;

  // Coarse-grained lock.
  bool cg_held_ = false;
  std::deque<std::uint32_t> cg_cpu_waiters_;
  std::deque<std::uint32_t> cg_kernel_waiters_;

  // Speculative protocol: PIM-data directory entries are locked until this
  // time after each commit or rollback; one attempt at a time may hold line locks.
  Cycle pim_map_locked_until_ = 0;
  std::optional<std::uint32_t> lock_holder_;
  std::unordered_set<LineAddr> locked_lines_;
  std::deque<std::uint32_t> lock_waiters_;
  std::deque<std::uint32_t> locked_line_waiters_;

  std::vector<LogEntry> log_;
  CoherenceStats stats_;
};

}  // namespace pimbench
