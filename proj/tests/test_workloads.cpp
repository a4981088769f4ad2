#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "pimbench/coherence.hpp"
#include "pimbench/workloads.hpp"

using namespace pimbench;

namespace {

struct Env {
  MemorySystem mem;
  PimAddressSpace space{mem};
};

RunResult run_keys(Env& env, const MemoryImage& image, const TraversalProgram& prog,
                   const std::vector<std::uint64_t>& params) {
  AddressTranslator tr(env.space.rpt(), env.space.four_level(), 32);
  std::vector<TraversalRequest> batch;
  for (auto p : params) batch.push_back({&prog, {p}, 0});
  return run_traversals({}, env.mem, tr, image, batch);
}

}  // namespace

TEST(LinkedList, WalkReachesRecordedTail) {
  Env env;
  StructureOptions o;
  o.seed = 3;
  const auto list = gen_linked_list(env.space, 500, o, 3);
  ASSERT_EQ(list.heads.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    // Host-side walk over the image.
    VirtAddr at = list.heads[i];
    std::size_t hops = 1;
    std::set<VirtAddr> seen;
    while (list.image->read_u64(at) != 0) {
      ASSERT_TRUE(seen.insert(at).second) << "cycle in list";
      at = list.image->read_u64(at);
      ++hops;
    }
    EXPECT_EQ(hops, list.nodes_per_list);
    EXPECT_EQ(list.image->read_u64(at + 8), list.tail_payloads[i]);
  }
  const auto r = run_keys(env, *list.image, *list.program, list.heads);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(r.traversals[i].results.at(0), list.tail_payloads[i]);
}

TEST(LinkedList, ScatteredNodesJumpBetweenPages) {
  Env env;
  StructureOptions scattered, packed;
  packed.locality = 1.0;
  const auto a = gen_linked_list(env.space, 400, scattered);
  const auto b = gen_linked_list(env.space, 400, packed);
  // Page changes between consecutive nodes.
  auto switches = [](const LinkedListWorkload& l) {
    std::size_t n = 0;
    for (VirtAddr at = l.heads[0], next; (next = l.image->read_u64(at)) != 0; at = next) n += (at >> 12) != (next >> 12);
    return n;
  };
  EXPECT_GT(switches(a), 4 * switches(b));
}

TEST(HashTable, LookupsMatchHostSet) {
  Env env;
  StructureOptions o;
  o.seed = 8;
  const auto h = gen_hash_table(env.space, 256, 384, o);
  EXPECT_EQ(h.keys.size(), 384u);
  const auto lens = h.chain_lengths();
  ASSERT_EQ(lens.size(), 256u);
  std::size_t total = 0;
  for (auto l : lens) total += l;
  EXPECT_EQ(total, 384u);
  const std::set<std::uint64_t> present(h.keys.begin(), h.keys.end());
  const auto probes = make_lookup_keys(h.keys, 200, 0.5, 4);
  const auto r = run_keys(env, *h.image, *h.program, probes);
  for (std::size_t i = 0; i < probes.size(); ++i)
    EXPECT_EQ(r.traversals[i].results.at(0), present.count(probes[i]) ? 1u : 0u) << "key " << probes[i];
}

TEST(BTree, NodesStayWithinOccupancyBounds) {
  Env env;
  for (bool random : {false, true}) {
    const auto t = gen_btree(env.space, 3000, {}, random);
    ASSERT_TRUE(std::is_sorted(t.keys.begin(), t.keys.end()));
    std::size_t keys = 0, nodes = 0;
    std::vector<std::pair<VirtAddr, std::size_t>> stack = {{t.root, 1}};
    std::size_t leaf_depth = 0;
    while (!stack.empty()) {
      auto [at, depth] = stack.back();
      stack.pop_back();
      const auto n = t.node_at(at);
      ++nodes;
      keys += n.keys.size();
      EXPECT_LE(n.keys.size(), BTreeWorkload::kMaxKeys);
      if (at != t.root) {
        EXPECT_GE(n.keys.size(), BTreeWorkload::kMinKeys);
      }
      EXPECT_TRUE(std::is_sorted(n.keys.begin(), n.keys.end()));
      if (n.leaf) {
        if (leaf_depth == 0) leaf_depth = depth;
        EXPECT_EQ(depth, leaf_depth) << "unbalanced tree";
      } else {
        EXPECT_EQ(n.children.size(), n.keys.size() + 1);
        for (VirtAddr c : n.children) stack.push_back({c, depth + 1});
      }
    }
    EXPECT_EQ(keys, 3000u);
    EXPECT_EQ(nodes, t.nodes);
    EXPECT_EQ(leaf_depth, t.depth);
  }
}

TEST(BTree, LookupsMatchBinarySearch) {
  Env env;
  const auto t = gen_btree(env.space, 2000, {}, true);
  const auto probes = make_lookup_keys(t.keys, 300, 0.5, 9);
  const auto r = run_keys(env, *t.image, *t.program, probes);
  for (std::size_t i = 0; i < probes.size(); ++i)
    EXPECT_EQ(r.traversals[i].results.at(0), std::binary_search(t.keys.begin(), t.keys.end(), probes[i]) ? 1u : 0u);
}

TEST(LookupKeys, HitFractionIsHonoured) {
  std::vector<std::uint64_t> present;
  for (std::uint64_t k = 1; k <= 1000; ++k) present.push_back(k * 7919);
  const std::set<std::uint64_t> in(present.begin(), present.end());
  const auto keys = make_lookup_keys(present, 10000, 0.3, 1);
  const auto hits = std::count_if(keys.begin(), keys.end(), [&](auto k) { return in.count(k) != 0; });
  EXPECT_NEAR(double(hits) / 10000.0, 0.3, 0.03);
  EXPECT_EQ(keys, make_lookup_keys(present, 10000, 0.3, 1));
}

TEST(Generators, SameSeedSameStructure) {
  Env a, b;
  StructureOptions o;
  o.seed = 77;
  const auto x = gen_hash_table(a.space, 128, 200, o);
  const auto y = gen_hash_table(b.space, 128, 200, o);
  EXPECT_TRUE(std::equal(x.image->raw().begin(), x.image->raw().end(), y.image->raw().begin(), y.image->raw().end()));
  EXPECT_EQ(x.keys, y.keys);
}

TEST(GraphWorkload, CpuShareNearTarget) {
  GraphParams g;
  g.vertices = 512;
  g.edges = 2048;
  g.seed = 5;
  const auto w = gen_graph_kernel(g);
  const double cpu = double(w.pim_data_accesses_by_cpu());
  const double share = cpu / (cpu + double(w.pim_data_accesses_by_pim()));
  EXPECT_GE(share, 0.40);
  EXPECT_LE(share, 0.45);
  EXPECT_EQ(w.kernels.size(), 32u);
  EXPECT_EQ(w.cpu_cores, 16u);
  EXPECT_THROW(gen_graph_kernel(GraphParams{.kernels = 0}), ConfigError);
}

TEST(GraphWorkload, EdgeListInputIsUsed) {
  std::istringstream in("# comment\n0 1\n1 2\n\n2 0  # trailing\n");
  const auto edges = read_edge_list(in);
  ASSERT_EQ(edges.size(), 3u);
  EXPECT_EQ(edges[2], std::make_pair(2u, 0u));
  GraphParams g;
  g.cpu_threads = 2;
  g.pim_cores = 1;
  g.kernels = 1;
  const auto w = gen_graph_kernel(g, edges);
  EXPECT_EQ(w.kernels.size(), 1u);
  std::istringstream bad("0 x\n");
  EXPECT_THROW(read_edge_list(bad), ConfigError);
}

TEST(HtapWorkload, NoTransactionsCommitsFirstTry) {
  HtapParams h;
  h.tuples = 2000;
  h.transactions = 0;
  h.analytic_kernels = 4;
  const auto w = gen_htap(h);
  SystemConfig c;
  System s(c, w);
  s.run();
  EXPECT_EQ(s.stats().rollbacks, 0u);
  EXPECT_EQ(s.stats().commits, 4u);
}

TEST(HtapWorkload, OperationsLandInTheTable) {
  HtapParams h;
  h.tuples = 1000;
  h.transactions = 100;
  const auto w = gen_htap(h);
  std::size_t cpu_pim = 0;
  for (const auto& ops : w.cpu_ops)
    for (const auto& op : ops) cpu_pim += w.is_pim_line(op.line);
  EXPECT_GE(cpu_pim, 100u * h.ops_per_transaction);
  for (const auto& k : w.kernels)
    for (const auto& op : k.ops) ASSERT_TRUE(w.is_pim_line(op.line));
}

TEST(SmallWorkload, RespectsBounds) {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    SmallParams p;
    p.seed = seed;
    const auto w = gen_small_random(p);
    EXPECT_LE(w.cpu_cores, 4u);
    EXPECT_LE(w.pim_cores, 2u);
    std::set<LineAddr> lines;
    std::size_t ops = 0;
    for (const auto& s : w.cpu_ops) {
      ops += s.size();
      for (const auto& op : s) lines.insert(op.line);
    }
    for (const auto& k : w.kernels) {
      ops += k.ops.size();
      for (const auto& op : k.ops) lines.insert(op.line);
    }
    EXPECT_LE(lines.size(), 64u);
    EXPECT_LE(ops, 200u);
  }
}
