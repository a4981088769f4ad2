#pragma once

// Deterministic workload generators: linked structures laid out in a PIM
// region (with matching traversal programs), and per-agent operation streams
// for the coherence experiments.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pimbench/common.hpp"
#include "pimbench/impica.hpp"
#include "pimbench/rpt.hpp"

namespace pimbench {

/// Flat byte image of one PIM region.
class LinkedDataImage final : public MemoryImage {
 public:
  LinkedDataImage(RegionDescriptor region, std::size_t bytes) : region_(region), bytes_(bytes) {}

  std::span<const std::byte> bytes_at(VirtAddr va, std::uint32_t size) const override;

  std::uint64_t read_u64(VirtAddr va) const;
  void write_u64(VirtAddr va, std::uint64_t value);

  const RegionDescriptor& region() const { return region_; }
  VirtAddr base() const { return region_.base; }
  std::size_t size() const { return bytes_.size(); }
  std::span<const std::byte> raw() const { return bytes_; }

 private:
  RegionDescriptor region_;
  std::vector<std::byte> bytes_;
};

inline std::uint64_t load_u64(std::span<const std::byte> bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v |= std::uint64_t(std::to_integer<std::uint8_t>(bytes[offset + i])) << (8 * i);
  return v;
}

struct StructureOptions {
  std::uint64_t seed = 1;
  PageSize leaf = PageSize::Small4K;
  std::uint32_t stack = 0;
  /// Fraction of nodes left in allocation order; 0 scatters every node.
  double locality = 0.0;
  /// Address-engine cycles charged per visited node.
  Cycle compute_per_node = 11;
};

struct LinkedListWorkload {
  std::unique_ptr<LinkedDataImage> image;
  std::unique_ptr<TraversalProgram> program;
  /// Head of each independent chain; one traversal parameter each.
  std::vector<VirtAddr> heads;
  /// Tail payload per chain, computed while laying out the nodes.
  std::vector<std::uint64_t> tail_payloads;
  std::size_t nodes_per_list = 0;
};

/// Node layout: 8B next pointer (0 terminates) + 56B payload.
LinkedListWorkload gen_linked_list(PimAddressSpace& space, std::size_t n_nodes, const StructureOptions& opts,
                                   std::size_t lists = 1);

struct HashTableWorkload {
  std::unique_ptr<LinkedDataImage> image;
  std::unique_ptr<TraversalProgram> program;
  std::vector<std::uint64_t> keys;
  std::size_t buckets = 0;
  VirtAddr bucket_base = 0;
  std::uint64_t hash_multiplier = 0;
  unsigned bucket_bits = 0;

  std::size_t bucket_of(std::uint64_t key) const { return static_cast<std::size_t>((key * hash_multiplier) >> (64 - bucket_bits)); }
  std::vector<std::size_t> chain_lengths() const;
};

/// Chained table; node layout {key, value, next, pad} of 32B. Emits 1 on hit.
HashTableWorkload gen_hash_table(PimAddressSpace& space, std::size_t buckets, std::size_t fill,
                                 const StructureOptions& opts);

struct BTreeWorkload {
  static constexpr std::size_t kMaxKeys = 15;
  static constexpr std::size_t kMinKeys = 7;
  static constexpr std::size_t kSlotBytes = 512;
  static constexpr std::uint32_t kNodeBytes = 8 + 16 * 8 + 17 * 8;

  std::unique_ptr<LinkedDataImage> image;
  std::unique_ptr<TraversalProgram> program;
  std::vector<std::uint64_t> keys;  // sorted
  VirtAddr root = 0;
  std::size_t depth = 0;
  std::size_t nodes = 0;

  struct NodeView {
    bool leaf;
    std::vector<std::uint64_t> keys;
    std::vector<VirtAddr> children;
  };
  NodeView node_at(VirtAddr va) const;
};

/// 16-way B-tree of 64-bit keys. Bulk-loaded from sorted keys unless
/// `insert_randomly` builds it by random-order insertion.
BTreeWorkload gen_btree(PimAddressSpace& space, std::size_t n_keys, const StructureOptions& opts,
                        bool insert_randomly = false);

/// Lookup stream: `hit_fraction` of the keys are drawn from `present`, the
/// rest are fresh random keys.
std::vector<std::uint64_t> make_lookup_keys(std::span<const std::uint64_t> present, std::size_t count,
                                            double hit_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Coherence workloads

/// Value a kernel folds into its accumulator when it reads `value`.
constexpr std::uint64_t kernel_mix(std::uint64_t acc, std::uint64_t value) {
  std::uint64_t x = (acc ^ value) * 0x9E3779B97F4A7C15ULL;
  return x ^ (x >> 29);
}

struct CpuOp {
  AccessKind kind = AccessKind::Read;
  LineAddr line = 0;
  std::uint8_t word = 0;
  std::uint64_t value = 0;  // written value for writes
  Cycle gap = 0;            // think time before the op
};

/// Reads fold the word into the accumulator; writes store kernel_mix(acc, imm).
struct KernelOp {
  AccessKind kind = AccessKind::Read;
  LineAddr line = 0;
  std::uint8_t word = 0;
  std::uint64_t imm = 0;
};

struct KernelSpec {
  KernelId id{};
  std::uint32_t pim_core = 0;
  Cycle release = 0;
  std::uint64_t acc_init = 0;
  std::vector<KernelOp> ops;
};

struct LineRange {
  LineAddr first = 0;
  std::uint64_t count = 0;
};

struct CoherenceWorkload {
  std::string kind;
  std::uint64_t seed = 0;
  std::uint32_t cpu_cores = 0;
  std::uint32_t pim_cores = 0;
  std::vector<std::vector<CpuOp>> cpu_ops;
  std::vector<KernelSpec> kernels;
  /// Lines allocated through the PIM annotation path.
  std::vector<LineRange> pim_ranges;

  std::uint64_t pim_data_accesses_by_cpu() const;
  std::uint64_t pim_data_accesses_by_pim() const;
  bool is_pim_line(LineAddr line) const;
};

struct GraphParams {
  std::size_t vertices = 2048;
  std::size_t edges = 8192;
  std::uint32_t cpu_threads = 16;
  std::uint32_t pim_cores = 16;
  std::size_t kernels = 32;
  /// Target share of PIM-data accesses issued by CPU threads.
  double cpu_share = 0.426;
  /// Probability that a CPU access to PIM data is a write.
  double cpu_write_fraction = 0.1;
  /// Share of CPU writes aimed at values kernels read; the rest update
  /// the output array kernels only write.
  double cpu_conflict_fraction = 0.01;
  /// Extra CPU accesses to thread-private data, per PIM-data access.
  double private_ratio = 0.25;
  /// Cycles over which kernel launches and CPU accesses are spread; 0
  /// derives 96 cycles per kernel operation.
  Cycle horizon = 0;
  std::uint64_t seed = 1;
};

/// PageRank-shaped sharing: kernels scan edges and accumulate into vertex
/// values while CPU threads read (and occasionally update) the same lines.
CoherenceWorkload gen_graph_kernel(const GraphParams& params,
                                   std::span<const std::pair<std::uint32_t, std::uint32_t>> edge_list = {});

struct HtapParams {
  std::size_t tuples = 10000;
  std::size_t transactions = 2000;
  std::size_t analytic_kernels = 16;
  std::uint32_t cpu_cores = 4;
  std::uint32_t pim_cores = 4;
  std::size_t ops_per_transaction = 4;
  double write_fraction = 0.5;
  /// Fraction of the table each analytic kernel scans.
  double scan_fraction = 0.1;
  std::uint64_t seed = 1;
};

/// Short CPU transactions over random tuples racing long PIM scans.
CoherenceWorkload gen_htap(const HtapParams& params);

struct SmallParams {
  std::uint32_t cpu_cores = 4;
  std::uint32_t pim_cores = 2;
  std::size_t lines = 64;
  std::size_t max_ops = 200;
  /// Upper bound on kernels; 0 allows up to three per PIM core.
  std::size_t max_kernels = 0;
  std::uint64_t seed = 1;
};

/// Randomized small instance sized for brute-force oracles.
CoherenceWorkload gen_small_random(const SmallParams& params);

/// SNAP-style edge list: one `u v` pair per line, `#` starts a comment.
std::vector<std::pair<std::uint32_t, std::uint32_t>> read_edge_list(std::istream& in);

}  // namespace pimbench
