#include "pimbench/workloads.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "pimbench/rng.hpp"

namespace pimbench {

namespace {

std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

// Slot permutation where roughly `locality` of the slots keep their place.
std::vector<std::size_t> scatter(std::size_t n, double locality, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::vector<std::size_t> moved;
  for (std::size_t i = 0; i < n; ++i)
    if (!rng.chance(locality)) moved.push_back(i);
  std::vector<std::size_t> targets = moved;
  rng.shuffle(std::span<std::size_t>(targets));
  for (std::size_t i = 0; i < moved.size(); ++i) perm[moved[i]] = targets[i];
  return perm;
}

std::vector<std::uint64_t> unique_keys(std::size_t n, Rng& rng) {
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::uint64_t> keys;
  keys.reserve(n);
  while (keys.size() < n) {
    const std::uint64_t k = rng.next();
    if (k != 0 && seen.insert(k).second) keys.push_back(k);
  }
  return keys;
}

class LinkedListWalk final : public TraversalProgram {
 public:
  explicit LinkedListWalk(Cycle compute) : compute_(compute) {}
  std::string_view name() const override { return "linked-list-walk"; }

  void start(TraversalContext& ctx, std::span<const std::uint64_t> params) const override {
    ctx.pc = 0;
    ctx.regs[0] = params.empty() ? 0 : params[0];
  }

  Step next(TraversalContext& ctx, std::span<const std::byte> loaded) const override {
    switch (ctx.pc) {
      case 0:
        if (ctx.regs[0] == 0) {
          ctx.pc = 3;
          return Step::emit(0);
        }
        ctx.pc = 1;
        return Step::load(ctx.regs[0], kLineBytes);
      case 1:
        ctx.pc = 2;
        return Step::compute(compute_);
      case 2: {
        const std::uint64_t next = load_u64(loaded, 0);
        if (next == 0) {
          ctx.pc = 3;
          return Step::emit(load_u64(loaded, 8));
        }
        ctx.regs[0] = next;
        ctx.pc = 1;
        return Step::load(next, kLineBytes);
      }
      default:
        return Step::done();
    }
  }

 private:
  Cycle compute_;
};

class HashLookup final : public TraversalProgram {
 public:
  HashLookup(VirtAddr buckets, unsigned bits, std::uint64_t mult, Cycle compute)
      : buckets_(buckets), bits_(bits), mult_(mult), compute_(compute) {}
  std::string_view name() const override { return "hash-lookup"; }

  void start(TraversalContext& ctx, std::span<const std::uint64_t> params) const override {
    ctx.pc = 0;
    ctx.regs[0] = params.empty() ? 0 : params[0];
  }

  Step next(TraversalContext& ctx, std::span<const std::byte> loaded) const override {
    switch (ctx.pc) {
      case 0:
        ctx.pc = 1;
        return Step::compute(compute_);
      case 1: {
        const std::uint64_t b = bits_ == 0 ? 0 : (ctx.regs[0] * mult_) >> (64 - bits_);
        ctx.pc = 2;
        return Step::load(buckets_ + b * 8, 8);
      }
      case 2: {
        const std::uint64_t head = load_u64(loaded, 0);
        if (head == 0) return miss(ctx);
        ctx.pc = 3;
        return Step::load(head, 32);
      }
      case 3:
        ctx.pc = 4;
        return Step::compute(compute_);
      case 4: {
        if (load_u64(loaded, 0) == ctx.regs[0]) {
          ctx.pc = 9;
          return Step::emit(1);
        }
        const std::uint64_t next = load_u64(loaded, 16);
        if (next == 0) return miss(ctx);
        ctx.pc = 3;
        return Step::load(next, 32);
      }
      default:
        return Step::done();
    }
  }

 private:
  static Step miss(TraversalContext& ctx) {
    ctx.pc = 9;
    return Step::emit(0);
  }

  VirtAddr buckets_;
  unsigned bits_;
  std::uint64_t mult_;
  Cycle compute_;
};

class BTreeLookup final : public TraversalProgram {
 public:
  BTreeLookup(VirtAddr root, Cycle compute) : root_(root), compute_(compute) {}
  std::string_view name() const override { return "btree-lookup"; }

  void start(TraversalContext& ctx, std::span<const std::uint64_t> params) const override {
    ctx.pc = 0;
    ctx.regs[0] = params.empty() ? 0 : params[0];
  }

  Step next(TraversalContext& ctx, std::span<const std::byte> loaded) const override {
    switch (ctx.pc) {
      case 0:
        ctx.pc = 1;
        return Step::load(root_, BTreeWorkload::kNodeBytes);
      case 1:
        ctx.pc = 2;
        return Step::compute(compute_);
      case 2: {
        const std::uint64_t header = load_u64(loaded, 0);
        const auto count = static_cast<std::uint32_t>(header);
        const bool leaf = (header >> 32) != 0;
        std::uint32_t i = 0;
        for (; i < count; ++i) {
          const std::uint64_t k = load_u64(loaded, 8 + 8 * i);
          if (k == ctx.regs[0]) {
            ctx.pc = 9;
            return Step::emit(1);
          }
          if (k > ctx.regs[0]) break;
        }
        if (leaf) {
          ctx.pc = 9;
          return Step::emit(0);
        }
        ctx.pc = 1;
        return Step::load(load_u64(loaded, 136 + 8 * i), BTreeWorkload::kNodeBytes);
      }
      default:
        return Step::done();
    }
  }

 private:
  VirtAddr root_;
  Cycle compute_;
};

struct HostNode {
  bool leaf = true;
  std::vector<std::uint64_t> keys;
  std::vector<std::size_t> children;
};

std::size_t max_keys_at(std::size_t height) {
  std::size_t m = BTreeWorkload::kMaxKeys;
  for (std::size_t h = 1; h < height; ++h) m = 16 * m + 15;
  return m;
}

// Builds a subtree of exactly `height` levels from sorted keys[lo, hi).
std::size_t bulk_build(std::vector<HostNode>& nodes, std::span<const std::uint64_t> keys, std::size_t height,
                       bool root) {
  const std::size_t idx = nodes.size();
  nodes.emplace_back();
  if (height == 1) {
    nodes[idx].keys.assign(keys.begin(), keys.end());
    return idx;
  }
  const std::size_t child_max = max_keys_at(height - 1);
  std::size_t c = (keys.size() + 1 + child_max) / (child_max + 1);
  c = std::max(c, root ? std::size_t{2} : std::size_t{8});
  const std::size_t body = keys.size() - (c - 1);
  std::vector<std::size_t> kids;
  std::vector<std::uint64_t> seps;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const std::size_t len = body / c + (i < body % c ? 1 : 0);
    kids.push_back(bulk_build(nodes, keys.subspan(pos, len), height - 1, false));
    pos += len;
    if (i + 1 < c) seps.push_back(keys[pos++]);
  }
  nodes[idx].leaf = false;
  nodes[idx].keys = std::move(seps);
  nodes[idx].children = std::move(kids);
  return idx;
}

// Textbook insertion with minimum degree 8 (7..15 keys per non-root node).
class HostBTree {
 public:
  HostBTree() { nodes.emplace_back(); }

  void insert(std::uint64_t key) {
    if (nodes[root].keys.size() == BTreeWorkload::kMaxKeys) {
      const std::size_t fresh = nodes.size();
      nodes.emplace_back();
      nodes[fresh].leaf = false;
      nodes[fresh].children.push_back(root);
      root = fresh;
      split_child(fresh, 0);
    }
    std::size_t x = root;
    for (;;) {
      auto& ks = nodes[x].keys;
      std::size_t i = static_cast<std::size_t>(std::upper_bound(ks.begin(), ks.end(), key) - ks.begin());
      if (nodes[x].leaf) {
        ks.insert(ks.begin() + static_cast<std::ptrdiff_t>(i), key);
        return;
      }
      if (nodes[nodes[x].children[i]].keys.size() == BTreeWorkload::kMaxKeys) {
        split_child(x, i);
        if (key > nodes[x].keys[i]) ++i;
      }
      x = nodes[x].children[i];
    }
  }

  std::vector<HostNode> nodes;
  std::size_t root = 0;

 private:
  void split_child(std::size_t parent, std::size_t i) {
    const std::size_t full = nodes[parent].children[i];
    const std::size_t fresh = nodes.size();
    nodes.emplace_back();
    HostNode& y = nodes[full];
    HostNode& z = nodes[fresh];
    z.leaf = y.leaf;
    constexpr std::size_t t = 8;
    z.keys.assign(y.keys.begin() + t, y.keys.end());
    const std::uint64_t median = y.keys[t - 1];
    y.keys.resize(t - 1);
    if (!y.leaf) {
      z.children.assign(y.children.begin() + t, y.children.end());
      y.children.resize(t);
    }
    auto& pk = nodes[parent].keys;
    auto& pc = nodes[parent].children;
    pk.insert(pk.begin() + static_cast<std::ptrdiff_t>(i), median);
    pc.insert(pc.begin() + static_cast<std::ptrdiff_t>(i) + 1, fresh);
  }
};

std::size_t host_depth(const std::vector<HostNode>& nodes, std::size_t root) {
  std::size_t d = 1;
  for (std::size_t x = root; !nodes[x].leaf; x = nodes[x].children[0]) ++d;
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------

std::span<const std::byte> LinkedDataImage::bytes_at(VirtAddr va, std::uint32_t size) const {
  if (va < region_.base || va - region_.base + size > bytes_.size()) throw NotPimRegion(va);
  return std::span<const std::byte>(bytes_).subspan(va - region_.base, size);
}

std::uint64_t LinkedDataImage::read_u64(VirtAddr va) const { return load_u64(bytes_at(va, 8), 0); }

void LinkedDataImage::write_u64(VirtAddr va, std::uint64_t value) {
  if (va < region_.base || va - region_.base + 8 > bytes_.size()) throw NotPimRegion(va);
  const std::size_t off = va - region_.base;
  for (std::size_t i = 0; i < 8; ++i) bytes_[off + i] = std::byte{static_cast<std::uint8_t>(value >> (8 * i))};
}

LinkedListWorkload gen_linked_list(PimAddressSpace& space, std::size_t n_nodes, const StructureOptions& opts,
                                   std::size_t lists) {
  if (n_nodes == 0 || lists == 0) throw ConfigError("linked list needs at least one node and one list");
  Rng rng(derive_seed(opts.seed, 0x11));
  const std::uint64_t heads_off = kLineBytes;
  const std::uint64_t nodes_off = heads_off + round_up(lists * 8, kLineBytes);
  const std::size_t total = n_nodes * lists;
  const std::uint64_t bytes = nodes_off + std::uint64_t{total} * kLineBytes;

  LinkedListWorkload w;
  const RegionDescriptor region = space.create_region(bytes, opts.leaf, opts.stack);
  w.image = std::make_unique<LinkedDataImage>(region, bytes);
  w.program = std::make_unique<LinkedListWalk>(opts.compute_per_node);
  w.nodes_per_list = n_nodes;
  LinkedDataImage& img = *w.image;
  img.write_u64(region.base, lists);
  img.write_u64(region.base + 8, n_nodes);

  const std::vector<std::size_t> slot = scatter(total, opts.locality, rng);
  auto node_va = [&](std::size_t logical) { return region.base + nodes_off + std::uint64_t{slot[logical]} * kLineBytes; };
  for (std::size_t l = 0; l < lists; ++l) {
    for (std::size_t k = 0; k < n_nodes; ++k) {
      const std::size_t logical = l * n_nodes + k;
      const VirtAddr va = node_va(logical);
      img.write_u64(va, k + 1 < n_nodes ? node_va(logical + 1) : 0);
      const std::uint64_t payload = rng.next();
      img.write_u64(va + 8, payload);
      if (k + 1 == n_nodes) w.tail_payloads.push_back(payload);
    }
    w.heads.push_back(node_va(l * n_nodes));
    img.write_u64(region.base + heads_off + 8 * l, w.heads.back());
  }
  return w;
}

std::vector<std::size_t> HashTableWorkload::chain_lengths() const {
  std::vector<std::size_t> lengths(buckets, 0);
  for (std::size_t b = 0; b < buckets; ++b)
    for (VirtAddr node = image->read_u64(bucket_base + 8 * b); node != 0; node = image->read_u64(node + 16))
      ++lengths[b];
  return lengths;
}

HashTableWorkload gen_hash_table(PimAddressSpace& space, std::size_t buckets, std::size_t fill,
                                 const StructureOptions& opts) {
  if (buckets == 0 || (buckets & (buckets - 1)) != 0) throw ConfigError("bucket count must be a power of two");
  if (fill > 4 * buckets) throw ConfigError("hash table load factor above 4");
  Rng rng(derive_seed(opts.seed, 0x22));
  HashTableWorkload w;
  w.buckets = buckets;
  w.bucket_bits = static_cast<unsigned>(std::countr_zero(buckets));
  w.hash_multiplier = rng.next() | 1;
  const std::uint64_t buckets_off = kLineBytes;
  const std::uint64_t nodes_off = buckets_off + round_up(buckets * 8, kLineBytes);
  const std::uint64_t bytes = nodes_off + round_up(std::uint64_t{fill} * 32, kLineBytes) + kLineBytes;

  const RegionDescriptor region = space.create_region(bytes, opts.leaf, opts.stack);
  w.image = std::make_unique<LinkedDataImage>(region, bytes);
  w.bucket_base = region.base + buckets_off;
  w.program = std::make_unique<HashLookup>(w.bucket_base, w.bucket_bits, w.hash_multiplier, opts.compute_per_node);
  LinkedDataImage& img = *w.image;
  img.write_u64(region.base, buckets);
  img.write_u64(region.base + 8, w.hash_multiplier);
  img.write_u64(region.base + 16, w.bucket_bits);

  w.keys = unique_keys(fill, rng);
  const std::vector<std::size_t> slot = scatter(fill, opts.locality, rng);
  for (std::size_t i = 0; i < fill; ++i) {
    const VirtAddr node = region.base + nodes_off + std::uint64_t{slot[i]} * 32;
    const VirtAddr head_va = w.bucket_base + 8 * w.bucket_of(w.keys[i]);
    img.write_u64(node, w.keys[i]);
    img.write_u64(node + 8, rng.next());
    img.write_u64(node + 16, img.read_u64(head_va));
    img.write_u64(head_va, node);
  }
  return w;
}

BTreeWorkload::NodeView BTreeWorkload::node_at(VirtAddr va) const {
  const std::uint64_t header = image->read_u64(va);
  NodeView v;
  v.leaf = (header >> 32) != 0;
  const auto count = static_cast<std::uint32_t>(header);
  for (std::uint32_t i = 0; i < count; ++i) v.keys.push_back(image->read_u64(va + 8 + 8 * i));
  if (!v.leaf)
    for (std::uint32_t i = 0; i <= count; ++i) v.children.push_back(image->read_u64(va + 136 + 8 * i));
  return v;
}

BTreeWorkload gen_btree(PimAddressSpace& space, std::size_t n_keys, const StructureOptions& opts,
                        bool insert_randomly) {
  if (n_keys == 0) throw ConfigError("B-tree needs at least one key");
  Rng rng(derive_seed(opts.seed, 0x33));
  BTreeWorkload w;
  std::vector<std::uint64_t> keys = unique_keys(n_keys, rng);

  std::vector<HostNode> nodes;
  std::size_t root = 0;
  if (insert_randomly) {
    HostBTree tree;
    for (std::uint64_t k : keys) tree.insert(k);
    nodes = std::move(tree.nodes);
    root = tree.root;
  } else {
    std::vector<std::uint64_t> sorted = keys;
    std::sort(sorted.begin(), sorted.end());
    std::size_t height = 1;
    while (max_keys_at(height) < sorted.size()) ++height;
    root = bulk_build(nodes, sorted, height, true);
  }
  std::sort(keys.begin(), keys.end());
  w.keys = std::move(keys);
  w.depth = host_depth(nodes, root);
  w.nodes = nodes.size();

  const std::uint64_t bytes = (nodes.size() + 1) * BTreeWorkload::kSlotBytes;
  const RegionDescriptor region = space.create_region(bytes, opts.leaf, opts.stack);
  w.image = std::make_unique<LinkedDataImage>(region, bytes);
  LinkedDataImage& img = *w.image;
  const std::vector<std::size_t> slot = scatter(nodes.size(), opts.locality, rng);
  auto va_of = [&](std::size_t i) { return region.base + (slot[i] + 1) * BTreeWorkload::kSlotBytes; };
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const HostNode& n = nodes[i];
    const VirtAddr va = va_of(i);
    img.write_u64(va, n.keys.size() | (std::uint64_t{n.leaf} << 32));
    for (std::size_t k = 0; k < n.keys.size(); ++k) img.write_u64(va + 8 + 8 * k, n.keys[k]);
    for (std::size_t c = 0; c < n.children.size(); ++c) img.write_u64(va + 136 + 8 * c, va_of(n.children[c]));
  }
  w.root = va_of(root);
  img.write_u64(region.base, w.root);
  img.write_u64(region.base + 8, w.keys.size());
  w.program = std::make_unique<BTreeLookup>(w.root, opts.compute_per_node);
  return w;
}

std::vector<std::uint64_t> make_lookup_keys(std::span<const std::uint64_t> present, std::size_t count,
                                            double hit_fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x44));
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!present.empty() && rng.chance(hit_fraction))
      out.push_back(present[rng.below(present.size())]);
    else
      out.push_back(rng.next() | 1);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr LineAddr kPimLineBase = 0x100000;      // 64 MiB
constexpr LineAddr kPrivateLineBase = 0x800000;  // 512 MiB
constexpr std::uint64_t kPrivateLinesPerCore = 256;

std::uint64_t unique_value(std::uint64_t seed, std::uint64_t core, std::uint64_t index) {
  return derive_seed(seed ^ (core << 40), index + 1) | 1;
}

struct WordArray {
  LineAddr first = 0;
  std::uint64_t words = 0;
  LineAddr line(std::uint64_t i) const { return first + i / kWordsPerLine; }
  std::uint8_t word(std::uint64_t i) const { return static_cast<std::uint8_t>(i % kWordsPerLine); }
  std::uint64_t lines() const { return (words + kWordsPerLine - 1) / kWordsPerLine; }
};

void add_private_ops(CoherenceWorkload& w, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t core = static_cast<std::uint32_t>(i % w.cpu_cores);
    CpuOp op;
    op.line = kPrivateLineBase + core * kPrivateLinesPerCore + rng.below(kPrivateLinesPerCore);
    op.word = static_cast<std::uint8_t>(rng.below(kWordsPerLine));
    op.kind = rng.chance(0.3) ? AccessKind::Write : AccessKind::Read;
    auto& stream = w.cpu_ops[core];
    op.value = unique_value(w.seed, core, stream.size());
    stream.insert(stream.begin() + static_cast<std::ptrdiff_t>(rng.below(stream.size() + 1)), op);
  }
}

void assign_gaps(CoherenceWorkload& w, Cycle mean_gap, Rng& rng) {
  for (auto& stream : w.cpu_ops)
    for (auto& op : stream) op.gap = rng.below(2 * mean_gap + 1);
}

}  // namespace

std::uint64_t CoherenceWorkload::pim_data_accesses_by_cpu() const {
  std::uint64_t n = 0;
  for (const auto& s : cpu_ops)
    for (const auto& op : s) n += is_pim_line(op.line) ? 1 : 0;
  return n;
}

std::uint64_t CoherenceWorkload::pim_data_accesses_by_pim() const {
  std::uint64_t n = 0;
  for (const auto& k : kernels) n += k.ops.size();
  return n;
}

bool CoherenceWorkload::is_pim_line(LineAddr line) const {
  return std::any_of(pim_ranges.begin(), pim_ranges.end(),
                     [line](const LineRange& r) { return line >= r.first && line - r.first < r.count; });
}

CoherenceWorkload gen_graph_kernel(const GraphParams& p,
                                   std::span<const std::pair<std::uint32_t, std::uint32_t>> edge_list) {
  if (p.cpu_threads == 0 || p.pim_cores == 0 || p.kernels == 0) throw ConfigError("graph workload needs agents");
  if (p.cpu_share <= 0.0 || p.cpu_share >= 1.0) throw ConfigError("cpu share must be in (0,1)");
  Rng rng(derive_seed(p.seed, 0x55));

  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges(edge_list.begin(), edge_list.end());
  std::size_t vertices = p.vertices;
  if (edges.empty()) {
    for (std::size_t e = 0; e < p.edges; ++e)
      edges.emplace_back(static_cast<std::uint32_t>(rng.below(vertices)), static_cast<std::uint32_t>(rng.below(vertices)));
  } else {
    vertices = 0;
    for (auto [u, v] : edges) vertices = std::max<std::size_t>(vertices, std::max(u, v) + std::size_t{1});
  }
  if (vertices == 0) throw ConfigError("graph has no vertices");

  // Pull-style CSR: for each vertex, the sources of its in-edges.
  std::vector<std::uint64_t> offsets(vertices + 1, 0);
  for (auto [u, v] : edges) ++offsets[v + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  std::vector<std::uint32_t> sources(edges.size());
  {
    std::vector<std::uint64_t> cursor(offsets.begin(), offsets.end() - 1);
    for (auto [u, v] : edges) sources[cursor[v]++] = u;
  }

  WordArray off_arr{kPimLineBase, vertices + 1};
  WordArray src_arr{off_arr.first + off_arr.lines(), edges.size()};
  WordArray curr{src_arr.first + src_arr.lines(), vertices};
  WordArray next{curr.first + curr.lines(), vertices};

  CoherenceWorkload w;
  w.kind = "graph";
  w.seed = p.seed;
  w.cpu_cores = p.cpu_threads;
  w.pim_cores = p.pim_cores;
  w.cpu_ops.resize(p.cpu_threads);
  w.pim_ranges.push_back({kPimLineBase, next.first + next.lines() - kPimLineBase});

  const std::size_t kernels = std::min(p.kernels, vertices);
  std::size_t pim_ops = 0;
  for (std::size_t k = 0; k < kernels; ++k) {
    KernelSpec spec;
    spec.id = KernelId{static_cast<std::uint32_t>(k)};
    spec.pim_core = static_cast<std::uint32_t>(k % p.pim_cores);
    spec.acc_init = derive_seed(p.seed, 0x1000 + k);
    const std::size_t lo = vertices * k / kernels;
    const std::size_t hi = vertices * (k + 1) / kernels;
    for (std::size_t v = lo; v < hi; ++v) {
      spec.ops.push_back({AccessKind::Read, off_arr.line(v), off_arr.word(v), 0});
      spec.ops.push_back({AccessKind::Read, off_arr.line(v + 1), off_arr.word(v + 1), 0});
      for (std::uint64_t e = offsets[v]; e < offsets[v + 1]; ++e) {
        spec.ops.push_back({AccessKind::Read, src_arr.line(e), src_arr.word(e), 0});
        spec.ops.push_back({AccessKind::Read, curr.line(sources[e]), curr.word(sources[e]), 0});
      }
      spec.ops.push_back({AccessKind::Write, next.line(v), next.word(v), v});
    }
    pim_ops += spec.ops.size();
    w.kernels.push_back(std::move(spec));
  }

  const auto cpu_pim_ops = static_cast<std::size_t>(std::llround(p.cpu_share / (1.0 - p.cpu_share) * double(pim_ops)));
  for (std::size_t i = 0; i < cpu_pim_ops; ++i) {
    const std::uint32_t core = static_cast<std::uint32_t>(i % p.cpu_threads);
    const std::uint64_t v = rng.below(vertices);
    CpuOp op;
    if (rng.chance(p.cpu_write_fraction)) {
      const WordArray& arr = rng.chance(p.cpu_conflict_fraction) ? curr : next;
      op.kind = AccessKind::Write;
      op.line = arr.line(v);
      op.word = arr.word(v);
      op.value = unique_value(p.seed, core, w.cpu_ops[core].size());
    } else {
      const WordArray& arr = rng.chance(0.5) ? next : curr;
      op.line = arr.line(v);
      op.word = arr.word(v);
    }
    w.cpu_ops[core].push_back(op);
  }
  add_private_ops(w, static_cast<std::size_t>(p.private_ratio * double(cpu_pim_ops)), rng);

  // Kernel launches and CPU accesses share one horizon.
  const Cycle horizon = p.horizon != 0 ? p.horizon : static_cast<Cycle>(pim_ops) * 96;
  for (std::size_t k = 0; k < w.kernels.size(); ++k) w.kernels[k].release = horizon * k / w.kernels.size();
  const double ops_per_thread = double(cpu_pim_ops) * (1.0 + p.private_ratio) / double(p.cpu_threads);
  const auto mean_gap = static_cast<Cycle>(std::max(1.0, double(horizon) / std::max(1.0, ops_per_thread)));
  assign_gaps(w, mean_gap, rng);
  return w;
}

CoherenceWorkload gen_htap(const HtapParams& p) {
  if (p.cpu_cores == 0 || p.pim_cores == 0 || p.tuples == 0) throw ConfigError("HTAP workload needs agents and tuples");
  Rng rng(derive_seed(p.seed, 0x66));
  CoherenceWorkload w;
  w.kind = "htap";
  w.seed = p.seed;
  w.cpu_cores = p.cpu_cores;
  w.pim_cores = p.pim_cores;
  w.cpu_ops.resize(p.cpu_cores);
  const LineAddr results = kPimLineBase + p.tuples;
  w.pim_ranges.push_back({kPimLineBase, p.tuples + p.analytic_kernels});

  for (std::size_t t = 0; t < p.transactions; ++t) {
    const std::uint32_t core = static_cast<std::uint32_t>(t % p.cpu_cores);
    auto& stream = w.cpu_ops[core];
    for (std::size_t i = 0; i < p.ops_per_transaction; ++i) {
      CpuOp op;
      op.line = kPimLineBase + rng.below(p.tuples);
      op.word = static_cast<std::uint8_t>(rng.below(kWordsPerLine));
      op.gap = i == 0 ? rng.between(20, 120) : rng.between(1, 4);
      if (rng.chance(p.write_fraction)) {
        op.kind = AccessKind::Write;
        op.value = unique_value(p.seed, core, stream.size());
      }
      stream.push_back(op);
    }
  }

  const std::size_t span = std::max<std::size_t>(1, static_cast<std::size_t>(p.scan_fraction * double(p.tuples)));
  for (std::size_t k = 0; k < p.analytic_kernels; ++k) {
    KernelSpec spec;
    spec.id = KernelId{static_cast<std::uint32_t>(k)};
    spec.pim_core = static_cast<std::uint32_t>(k % p.pim_cores);
    spec.acc_init = derive_seed(p.seed, 0x2000 + k);
    const std::size_t start = rng.below(p.tuples);
    const auto column = static_cast<std::uint8_t>(rng.below(kWordsPerLine));
    for (std::size_t i = 0; i < span; ++i)
      spec.ops.push_back({AccessKind::Read, kPimLineBase + (start + i) % p.tuples, column, 0});
    spec.ops.push_back({AccessKind::Write, results + k, 0, k});
    w.kernels.push_back(std::move(spec));
  }
  return w;
}

CoherenceWorkload gen_small_random(const SmallParams& p) {
  if (p.cpu_cores == 0 || p.pim_cores == 0 || p.lines < 4) throw ConfigError("small workload too small");
  Rng rng(derive_seed(p.seed, 0x77));
  CoherenceWorkload w;
  w.kind = "small";
  w.seed = p.seed;
  w.cpu_cores = p.cpu_cores;
  w.pim_cores = p.pim_cores;
  w.cpu_ops.resize(p.cpu_cores);
  const std::size_t pim_lines = p.lines * 3 / 4;
  w.pim_ranges.push_back({kPimLineBase, pim_lines});
  const std::size_t budget = std::max<std::size_t>(4, p.max_ops / 2);

  for (std::uint32_t c = 0; c < p.cpu_cores; ++c) {
    const std::size_t n = rng.between(1, std::max<std::size_t>(1, budget / p.cpu_cores));
    for (std::size_t i = 0; i < n; ++i) {
      CpuOp op;
      const std::uint64_t pick = rng.below(p.lines);
      op.line = pick < pim_lines ? kPimLineBase + pick : kPrivateLineBase + (pick - pim_lines);
      op.word = static_cast<std::uint8_t>(rng.below(kWordsPerLine));
      op.gap = rng.below(60);
      if (rng.chance(0.4)) {
        op.kind = AccessKind::Write;
        op.value = unique_value(p.seed, c, i);
      }
      w.cpu_ops[c].push_back(op);
    }
  }
  const std::size_t most = p.max_kernels != 0 ? p.max_kernels : 3 * p.pim_cores;
  const std::size_t kernels = rng.between(std::min<std::size_t>(p.pim_cores, most), most);
  for (std::size_t k = 0; k < kernels; ++k) {
    KernelSpec spec;
    spec.id = KernelId{static_cast<std::uint32_t>(k)};
    spec.pim_core = static_cast<std::uint32_t>(k % p.pim_cores);
    spec.release = rng.below(300);
    spec.acc_init = derive_seed(p.seed, 0x3000 + k);
    const std::size_t n = rng.between(1, std::max<std::size_t>(1, budget / kernels));
    for (std::size_t i = 0; i < n; ++i) {
      KernelOp op;
      op.line = kPimLineBase + rng.below(pim_lines);
      op.word = static_cast<std::uint8_t>(rng.below(kWordsPerLine));
      op.kind = rng.chance(0.35) ? AccessKind::Write : AccessKind::Read;
      op.imm = rng.next();
      spec.ops.push_back(op);
    }
    w.kernels.push_back(std::move(spec));
  }
  return w;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> read_edge_list(std::istream& in) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    long long u = 0;
    long long v = 0;
    if (!(fields >> u)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw ConfigError("edge list line " + std::to_string(number) + ": expected `u v`");
    }
    std::string extra;
    if (!(fields >> v) || (fields >> extra) || u < 0 || v < 0 || u > 0xFFFFFFFFLL || v > 0xFFFFFFFFLL)
      throw ConfigError("edge list line " + std::to_string(number) + ": expected `u v`");
    edges.emplace_back(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v));
  }
  if (in.bad()) throw IoError("failed reading edge list");
  return edges;
}

}  // namespace pimbench
