#pragma once

// In-memory pointer-chasing accelerator: an address engine that runs
// traversal programs and context-switches on every load, and an access
// engine that translates and issues those loads without blocking.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pimbench/assoc_cache.hpp"
#include "pimbench/common.hpp"
#include "pimbench/memsys.hpp"
#include "pimbench/rpt.hpp"

namespace pimbench {

/// Read-only byte view of the accelerator's virtual memory.
class MemoryImage {
 public:
  virtual ~MemoryImage() = default;
  virtual std::span<const std::byte> bytes_at(VirtAddr va, std::uint32_t size) const = 0;
};

struct TraversalContext {
  std::uint32_t pc = 0;
  std::array<std::uint64_t, 8> regs{};
};

struct Step {
  enum class Kind : std::uint8_t { Compute, Load, Emit, Done };
  Kind kind = Kind::Done;
  Cycle cost = 0;
  VirtAddr va = 0;
  std::uint32_t size = 0;
  std::uint64_t value = 0;

  static Step compute(Cycle cycles) { return {Kind::Compute, cycles, 0, 0, 0}; }
  static Step load(VirtAddr va, std::uint32_t size) { return {Kind::Load, 0, va, size, 0}; }
  static Step emit(std::uint64_t value) { return {Kind::Emit, 0, 0, 0, value}; }
  static Step done() { return {Kind::Done, 0, 0, 0, 0}; }
};

/// Instruction-RAM contents, abstracted to a step generator. `next` is
/// re-entered after every step; after a Load it receives the loaded bytes.
class TraversalProgram {
 public:
  virtual ~TraversalProgram() = default;
  virtual std::string_view name() const = 0;
  virtual void start(TraversalContext& ctx, std::span<const std::uint64_t> params) const = 0;
  virtual Step next(TraversalContext& ctx, std::span<const std::byte> loaded) const = 0;
};

struct ImpicaConfig {
  std::size_t queue_entries = 16;
  std::size_t data_ram_bytes = 16 * 1024;
  std::size_t context_bytes = 64;
  /// 0 selects min(queue_entries, data_ram_bytes / context_bytes).
  std::size_t max_concurrent = 0;
  std::size_t cache_bytes = 32 * 1024;
  std::size_t cache_ways = 2;
  /// Accesses of a traversal that mark their lines as root lines.
  std::size_t root_window = 2;
  std::size_t tlb_entries = 32;
  bool tlb_enabled = true;
  PageTableKind page_table = PageTableKind::Rpt;
  Cycle context_switch_cycles = 1;
  Cycle tlb_lookup_cycles = 1;
  Cycle cache_hit_cycles = 1;
  Cycle emit_cycles = 1;
  std::uint32_t packet_bytes = 16;
  std::uint32_t result_bytes = 8;
  std::uint32_t stack = 0;
  std::uint32_t engine_id = 0;

  std::size_t effective_max_concurrent() const;
  std::size_t context_capacity() const { return data_ram_bytes / context_bytes; }
  void validate() const;
};

struct ImpicaLineMeta {
  std::uint32_t lock_count = 0;
  bool has_request = false;
  RequestId request{};
  bool root = false;
};

/// Accelerator-side cache with line locking, request-ID tags and root bits.
class ImpicaCache {
 public:
  using Store = SetAssociativeCache<ImpicaLineMeta>;
  using Line = Store::Line;

  ImpicaCache(std::size_t bytes, std::size_t ways) : store_(bytes, ways) {}

  bool contains_all(std::span<const LineAddr> lines) const;
  /// All-or-nothing insert of one response; lines end up locked and stamped
  /// with `req`. Fails without side effects if some set is fully locked.
  bool try_insert(std::span<const LineAddr> lines, RequestId req, bool root);
  void unlock(std::span<const LineAddr> lines);
  /// Removes lines fetched by a finished traversal. Root lines stay resident
  /// but lose their request ID.
  std::size_t release_request(RequestId req);

  std::size_t lines_with_request(RequestId req) const;
  std::size_t locked_lines() const;
  bool set_fully_locked(LineAddr line) const;
  const Line* find(LineAddr line) const { return store_.find(line); }
  const Store& store() const { return store_; }
  std::size_t evictions() const { return evictions_; }

 private:
  Store store_;
  std::size_t evictions_ = 0;
};

enum class EngineAction : std::uint8_t { ExecutedCompute, IssuedLoad, ContextSwitched, EmittedResult, Finished, Idle };
enum class AccessAction : std::uint8_t { TranslatedAndIssued, StalledCacheFull, Idle };

/// One data access as seen by the trace export.
struct AccessTrace {
  RequestId request{};
  VirtAddr va = 0;
  PhysAddr pa = 0;
  Cycle issue = 0;
  Cycle complete = 0;
  std::uint32_t walk_accesses = 0;
  bool tlb_hit = false;
  bool cache_hit = false;
};

/// Cache-discipline events, kept for inspection by tests and traces.
struct CacheEvent {
  enum class Kind : std::uint8_t { Insert, InsertStalled, InsertResumed, Unlock, Release };
  Kind kind;
  Cycle time;
  RequestId request;
  LineAddr line;
};

struct TraversalOutcome {
  RequestId id{};
  std::vector<std::uint64_t> results;
  Cycle submit = 0;
  Cycle start = 0;
  Cycle finish = 0;
  std::uint64_t loads = 0;
  std::uint64_t steps = 0;
  std::optional<std::string> fault;
};

struct EngineStats {
  Cycle address_busy_cycles = 0;
  Cycle compute_cycles = 0;
  std::uint64_t context_switches = 0;
  std::uint64_t loads = 0;
  std::uint64_t data_requests = 0;
  std::uint64_t walk_requests = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t access_stalls = 0;
  std::uint64_t access_queue_stalls = 0;
  std::uint64_t backpressure = 0;
  std::uint64_t faults = 0;
  std::uint64_t dropped_responses = 0;
  std::size_t peak_request_queue = 0;
  std::size_t peak_access_queue = 0;
  std::size_t peak_response_queue = 0;
  std::size_t peak_contexts = 0;
};

class ImpicaEngine {
 public:
  ImpicaEngine(ImpicaConfig config, MemorySystem& mem, AddressTranslator& translator, const MemoryImage& image);

  /// Sends the call packet; nullopt means the request queue is full.
  std::optional<RequestId> enqueue_traversal(const TraversalProgram& program, std::vector<std::uint64_t> params);

  EngineAction step_address_engine();
  AccessAction step_access_engine();

  /// Processes everything due now, or moves time to the next event if
  /// nothing is. Returns false when no event is pending at or before `limit`.
  bool advance(Cycle limit = ~Cycle{0});
  void run_until_idle();
  void advance_to(Cycle t);

  bool idle() const;
  Cycle now() const { return now_; }
  bool request_queue_full() const { return request_queue_.full(); }

  const ImpicaConfig& config() const { return config_; }
  const ImpicaCache& cache() const { return cache_; }
  const EngineStats& stats() const { return stats_; }
  const std::vector<AccessTrace>& trace() const { return trace_; }
  const std::vector<CacheEvent>& cache_events() const { return cache_events_; }
  std::vector<TraversalOutcome> outcomes() const;
  std::size_t access_queue_size() const { return access_queue_.size(); }
  std::size_t response_queue_size() const { return response_queue_.size(); }
  std::size_t stored_contexts() const { return stored_contexts_; }

 private:
  enum class EntryState : std::uint8_t { Waiting, Walking, Fetching, Blocked };

  struct AccessEntry {
    std::uint32_t uid = 0;
    RequestId request{};
    VirtAddr va = 0;
    std::uint32_t size = 0;
    std::uint32_t access_index = 0;
    EntryState state = EntryState::Waiting;
    Translation translation;
    std::size_t next_walk = 0;
    std::vector<LineAddr> lines;
    Cycle issue = 0;
    bool cache_hit = false;
  };

  struct ResponseEntry {
    RequestId request{};
    std::vector<LineAddr> lines;
    VirtAddr va = 0;
    std::uint32_t size = 0;
  };

  struct Traversal {
    const TraversalProgram* program = nullptr;
    TraversalContext ctx;
    TraversalOutcome outcome;
    Cycle eligible = 0;
    std::uint32_t accesses = 0;
    bool admitted = false;
    bool active = false;
    bool context_stored = false;
    std::optional<Step> pending_load;
    std::vector<std::byte> loaded;
  };

  struct PendingMem {
    Cycle time;
    std::uint64_t seq;
    std::uint32_t uid;
    bool operator>(const PendingMem& o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };

  bool address_has_work() const;
  bool access_has_work() const;
  AccessEntry* find_entry(std::uint32_t uid);
  void schedule(std::uint32_t uid, Cycle time);
  void on_memory_complete(std::uint32_t uid, Cycle time);
  void start_fetch(AccessEntry& entry, Cycle time);
  bool try_deliver(AccessEntry& entry);
  void finish_traversal(Traversal& t);
  void abort_traversal(Traversal& t, const std::string& why);
  Traversal& traversal(RequestId id) { return traversals_[to_index(id)]; }

  ImpicaConfig config_;
  MemorySystem* mem_;
  AddressTranslator* translator_;
  const MemoryImage* image_;
  ImpicaCache cache_;

  BoundedQueue<RequestId> request_queue_;
  BoundedQueue<AccessEntry> access_queue_;
  BoundedQueue<ResponseEntry> response_queue_;
  std::priority_queue<PendingMem, std::vector<PendingMem>, std::greater<>> pending_;
  std::uint64_t seq_ = 0;
  std::uint32_t next_uid_ = 0;

  std::vector<Traversal> traversals_;
  std::optional<RequestId> running_;
  std::size_t active_ = 0;
  std::size_t stored_contexts_ = 0;
  bool access_stalled_ = false;

  Cycle now_ = 0;
  Cycle address_free_ = 0;
  Cycle access_free_ = 0;

  EngineStats stats_;
  std::vector<AccessTrace> trace_;
  std::vector<CacheEvent> cache_events_;
};

struct TraversalRequest {
  const TraversalProgram* program = nullptr;
  std::vector<std::uint64_t> params;
  Cycle submit_time = 0;
};

struct RunResult {
  std::vector<TraversalOutcome> traversals;
  Cycle makespan = 0;
  double address_engine_utilization = 0.0;
  EngineStats engine;
  TranslationStats translation;
  std::vector<AccessTrace> trace;
};

/// Submits the batch as the CPU would (stalling on backpressure) and runs
/// the engine to completion.
RunResult run_traversals(const ImpicaConfig& config, MemorySystem& mem, AddressTranslator& translator,
                         const MemoryImage& image, std::span<const TraversalRequest> batch);

/// JSON-lines rendering of an access trace.
std::string trace_to_json_lines(std::span<const AccessTrace> trace);

}  // namespace pimbench
