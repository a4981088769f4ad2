#include "pimbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "json.hpp"

namespace pimbench {

std::string_view experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::ImpicaMicro: return "impica-micro";
    case ExperimentKind::ImpicaSensitivity: return "impica-sensitivity";
    case ExperimentKind::Coherence: return "coherence";
  }
  return "unknown";
}

std::string_view structure_name(StructureKind k) {
  switch (k) {
    case StructureKind::LinkedList: return "linked-list";
    case StructureKind::HashTable: return "hash-table";
    case StructureKind::BTree: return "btree";
  }
  return "unknown";
}

std::string_view coherence_workload_name(CoherenceWorkloadKind k) {
  switch (k) {
    case CoherenceWorkloadKind::Graph: return "graph";
    case CoherenceWorkloadKind::Htap: return "htap";
    case CoherenceWorkloadKind::Small: return "small";
  }
  return "unknown";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string_view s) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') return t.substr(1, t.size() - 2);
  return t;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("key `" + std::string(key) + "`: expected " + std::string(expected) + ", got `" +
                    std::string(value) + "`");
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const std::string s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s = trim(v);
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(d)) bad_value(key, v, "a number");
  return d;
}

bool to_bool(std::string_view key, std::string_view v) {
  const std::string s = trim(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> to_list(std::string_view v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in{std::string(v)};
  while (std::getline(in, item, ',')) {
    item = unquote(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T narrow(std::string_view key, std::string_view v) {
  const std::uint64_t x = to_u64(key, v);
  if (x > std::numeric_limits<T>::max()) bad_value(key, v, "a smaller integer");
  return static_cast<T>(x);
}

using Setter = std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> t;
    auto add = [&](std::string k, Setter s) { t.emplace_back(std::move(k), std::move(s)); };
#define U64(KEY, FIELD) add(KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_u64(k, v); })
#define U32(KEY, FIELD) \
  add(KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = narrow<std::uint32_t>(k, v); })
#define SIZE(KEY, FIELD) \
  add(KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = narrow<std::size_t>(k, v); })
#define DBL(KEY, FIELD) add(KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_double(k, v); })
#define BOOL(KEY, FIELD) add(KEY, [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_bool(k, v); })

    add("config-version", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      const auto ver = to_u64(k, v);
      if (ver != kConfigVersion) throw ConfigError("unsupported config-version " + trim(v));
      c.config_version = static_cast<int>(ver);
    });
    add("experiment.name", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.name = unquote(v); });
    add("experiment.kind", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      const std::string s = unquote(v);
      for (auto kind : {ExperimentKind::ImpicaMicro, ExperimentKind::ImpicaSensitivity, ExperimentKind::Coherence})
        if (experiment_kind_name(kind) == s) {
          c.kind = kind;
          return;
        }
      bad_value(k, v, "impica-micro, impica-sensitivity or coherence");
    });
    U64("experiment.seed", seed);
    BOOL("experiment.trace", trace);

    U64("timing.cpu-dram-latency", timing.cpu_dram_latency);
    U64("timing.pim-dram-latency", timing.pim_dram_latency);
    DBL("timing.cpu-channel-bw", timing.cpu_channel_bw);
    DBL("timing.pim-internal-bw", timing.pim_internal_bw);
    U32("timing.header-bytes", timing.header_bytes);
    U32("timing.stacks", timing.stack_count);

    add("impica.structure", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      const std::string s = unquote(v);
      for (auto kind : {StructureKind::LinkedList, StructureKind::HashTable, StructureKind::BTree})
        if (structure_name(kind) == s) {
          c.impica.structure = kind;
          return;
        }
      bad_value(k, v, "linked-list, hash-table or btree");
    });
    SIZE("impica.list-nodes", impica.list_nodes);
    SIZE("impica.lists", impica.lists);
    SIZE("impica.hash-buckets", impica.hash_buckets);
    SIZE("impica.hash-fill", impica.hash_fill);
    SIZE("impica.btree-keys", impica.btree_keys);
    BOOL("impica.btree-random-insert", impica.btree_random_insert);
    SIZE("impica.lookups", impica.lookups);
    DBL("impica.hit-fraction", impica.hit_fraction);
    DBL("impica.locality", impica.locality);
    U64("impica.compute-per-node", impica.compute_per_node);
    add("impica.leaf", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      const std::string s = unquote(v);
      if (s == "4k") c.impica.leaf = PageSize::Small4K;
      else if (s == "2m") c.impica.leaf = PageSize::Large2M;
      else bad_value(k, v, "4k or 2m");
    });
    add("impica.page-table", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      const std::string s = unquote(v);
      if (s == "rpt") c.impica.engine.page_table = PageTableKind::Rpt;
      else if (s == "four-level") c.impica.engine.page_table = PageTableKind::FourLevel;
      else bad_value(k, v, "rpt or four-level");
    });
    SIZE("impica.tlb-entries", impica.engine.tlb_entries);
    BOOL("impica.tlb-enabled", impica.engine.tlb_enabled);
    SIZE("impica.queue-entries", impica.engine.queue_entries);
    SIZE("impica.cache-bytes", impica.engine.cache_bytes);
    SIZE("impica.cache-ways", impica.engine.cache_ways);
    SIZE("impica.max-concurrent", impica.engine.max_concurrent);
    SIZE("impica.root-window", impica.engine.root_window);
    add("impica.sensitivity-tlb-sizes", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.impica.sensitivity_tlb_sizes.clear();
      for (const auto& item : to_list(v)) c.impica.sensitivity_tlb_sizes.push_back(narrow<std::size_t>(k, item));
    });

    add("coherence.mechanism", [](ExperimentConfig& c, std::string_view, std::string_view v) {
      c.coherence.mechanism = parse_mechanism(unquote(v));
    });
    add("coherence.workload", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      const std::string s = unquote(v);
      for (auto kind : {CoherenceWorkloadKind::Graph, CoherenceWorkloadKind::Htap, CoherenceWorkloadKind::Small})
        if (coherence_workload_name(kind) == s) {
          c.coherence.workload = kind;
          return;
        }
      bad_value(k, v, "graph, htap or small");
    });
    U32("coherence.max-rollbacks", coherence.max_rollbacks);
    add("coherence.compare", [](ExperimentConfig& c, std::string_view, std::string_view v) {
      c.coherence.compare.clear();
      for (const auto& item : to_list(v)) c.coherence.compare.push_back(parse_mechanism(item));
    });
    add("coherence.edge-list", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.coherence.edge_list = unquote(v); });

    SIZE("graph.vertices", coherence.graph.vertices);
    SIZE("graph.edges", coherence.graph.edges);
    U32("graph.cpu-threads", coherence.graph.cpu_threads);
    U32("graph.pim-cores", coherence.graph.pim_cores);
    SIZE("graph.kernels", coherence.graph.kernels);
    DBL("graph.cpu-share", coherence.graph.cpu_share);
    DBL("graph.write-fraction", coherence.graph.cpu_write_fraction);
    DBL("graph.conflict-fraction", coherence.graph.cpu_conflict_fraction);
    DBL("graph.private-ratio", coherence.graph.private_ratio);
    U64("graph.horizon", coherence.graph.horizon);

    SIZE("htap.tuples", coherence.htap.tuples);
    SIZE("htap.transactions", coherence.htap.transactions);
    SIZE("htap.kernels", coherence.htap.analytic_kernels);
    U32("htap.cpu-cores", coherence.htap.cpu_cores);
    U32("htap.pim-cores", coherence.htap.pim_cores);
    SIZE("htap.ops-per-transaction", coherence.htap.ops_per_transaction);
    DBL("htap.write-fraction", coherence.htap.write_fraction);
    DBL("htap.scan-fraction", coherence.htap.scan_fraction);

    U32("small.cpu-cores", coherence.small.cpu_cores);
    U32("small.pim-cores", coherence.small.pim_cores);
    SIZE("small.lines", coherence.small.lines);
    SIZE("small.max-ops", coherence.small.max_ops);
    SIZE("small.max-kernels", coherence.small.max_kernels);

    add("sweep.parameter", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.sweep_parameter = unquote(v); });
    add("sweep.values", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.sweep_values = to_list(v); });
    add("sweep.seeds", [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.sweep_seeds.clear();
      for (const auto& item : to_list(v)) c.sweep_seeds.push_back(to_u64(k, item));
    });
#undef U64
#undef U32
#undef SIZE
#undef DBL
#undef BOOL
    return t;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  for (const auto& [name, setter] : setters()) {
    if (name == key) {
      setter(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown key `" + std::string(key) + "`");
}

std::vector<std::string> ExperimentConfig::known_keys() {
  std::vector<std::string> out;
  for (const auto& [name, _] : setters()) out.push_back(name);
  return out;
}

void ExperimentConfig::apply_paper_scale() {
  impica.list_nodes = 30000;
  impica.hash_buckets = std::size_t{1} << 20;
  impica.hash_fill = std::size_t{3} << 19;
  impica.btree_keys = 3000000;
  impica.btree_random_insert = true;
  impica.lookups = 100000;
  coherence.htap.transactions = 200000;
  coherence.htap.analytic_kernels = 256;
}

void ExperimentConfig::validate() const {
  if (config_version != kConfigVersion) throw ConfigError("unsupported config-version");
  timing.validate();
  impica.engine.validate();
  if (impica.list_nodes == 0 || impica.lists == 0) throw ConfigError("linked list needs nodes");
  if (impica.hash_buckets == 0 || (impica.hash_buckets & (impica.hash_buckets - 1)) != 0)
    throw ConfigError("hash buckets must be a power of two");
  if (impica.hash_fill > 4 * impica.hash_buckets) throw ConfigError("hash fill exceeds 4 keys per bucket");
  if (impica.btree_keys == 0) throw ConfigError("B-tree needs keys");
  if (impica.hit_fraction < 0.0 || impica.hit_fraction > 1.0) throw ConfigError("hit fraction must be in [0,1]");
  if (impica.locality < 0.0 || impica.locality > 1.0) throw ConfigError("locality must be in [0,1]");
  if (coherence.max_rollbacks == 0) throw ConfigError("max rollbacks must be positive");
  auto cores = [](std::uint32_t n, const char* what) {
    if (n < 4 || n > 16) throw ConfigError(std::string(what) + " must be between 4 and 16");
  };
  cores(coherence.graph.cpu_threads, "graph.cpu-threads");
  cores(coherence.graph.pim_cores, "graph.pim-cores");
  cores(coherence.htap.cpu_cores, "htap.cpu-cores");
  cores(coherence.htap.pim_cores, "htap.pim-cores");
  if (coherence.small.cpu_cores == 0 || coherence.small.cpu_cores > 4 || coherence.small.pim_cores == 0 ||
      coherence.small.pim_cores > 2)
    throw ConfigError("small workload is limited to 4 CPU and 2 PIM cores");
  if (coherence.graph.cpu_share <= 0.0 || coherence.graph.cpu_share >= 1.0) throw ConfigError("graph.cpu-share must be in (0,1)");
  for (double f : {coherence.graph.cpu_write_fraction, coherence.graph.cpu_conflict_fraction, coherence.htap.write_fraction,
                   coherence.htap.scan_fraction})
    if (f < 0.0 || f > 1.0) throw ConfigError("fractions must be in [0,1]");
}

ExperimentConfig ExperimentConfig::parse(std::istream& in, std::string_view origin) {
  ExperimentConfig c;
  std::string line;
  std::string section;
  std::unordered_set<std::string> seen;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    auto where = [&] { return std::string(origin) + ":" + std::to_string(number) + ": "; };
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where() + "malformed section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected `key = value`");
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    if (!seen.insert(key).second) throw ConfigError(where() + "duplicate key `" + key + "`");
    try {
      c.set(key, std::string_view(t).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where() + e.what());
    }
  }
  if (in.bad()) throw IoError("failed reading " + std::string(origin));
  if (!seen.count("config-version")) throw ConfigError(std::string(origin) + ": missing config-version");
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  return parse(in, path);
}

// ---------------------------------------------------------------------------

std::optional<double> RunReport::find(std::string_view name) const {
  for (const auto& m : metrics)
    if (m.name == name) return m.value;
  return std::nullopt;
}

double RunReport::get(std::string_view name) const {
  auto v = find(name);
  if (!v) throw SimError("run " + mechanism + " has no metric " + std::string(name));
  return *v;
}

const RunReport* MetricsReport::find(std::string_view mechanism, std::uint64_t seed) const {
  for (const auto& r : runs)
    if (r.mechanism == mechanism && r.seed == seed) return &r;
  return nullptr;
}

ExportFormat parse_format(std::string_view s) {
  if (s == "csv") return ExportFormat::Csv;
  if (s == "json") return ExportFormat::Json;
  throw ConfigError("unknown export format `" + std::string(s) + "`");
}

namespace {

std::string format_value(double v) {
  char buf[64];
  if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 9.0e15)
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
  else
    std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string to_csv(const MetricsReport& report) {
  std::string out = "experiment,mechanism,seed,metric,value\n";
  for (const auto& run : report.runs)
    for (const auto& m : run.metrics)
      out += csv_field(run.experiment) + "," + csv_field(run.mechanism) + "," + std::to_string(run.seed) + "," +
             csv_field(m.name) + "," + format_value(m.value) + "\n";
  return out;
}

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& run : report.runs) {
    nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
    for (const auto& m : run.metrics) metrics.push_back({{"name", m.name}, {"value", m.value}});
    runs.push_back({{"experiment", run.experiment}, {"mechanism", run.mechanism}, {"seed", run.seed}, {"metrics", metrics}});
  }
  nlohmann::ordered_json j = {{"runs", runs}};
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(std::string_view text) {
  MetricsReport report;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& r : j.at("runs")) {
      RunReport run;
      run.experiment = r.at("experiment").get<std::string>();
      run.mechanism = r.at("mechanism").get<std::string>();
      run.seed = r.at("seed").get<std::uint64_t>();
      for (const auto& m : r.at("metrics")) run.add(m.at("name").get<std::string>(), m.at("value").get<double>());
      report.runs.push_back(std::move(run));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed report JSON: ") + e.what());
  }
  return report;
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

void export_report(const MetricsReport& report, ExportFormat format, const std::string& path) {
  write_text_file(path, format == ExportFormat::Csv ? to_csv(report) : to_json(report));
}

// ---------------------------------------------------------------------------

std::size_t harness_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PIMBENCH_THREADS")) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || v == 0)
      throw ConfigError("PIMBENCH_THREADS must be a positive integer");
    n = static_cast<std::size_t>(v);
  }
  return n;
}

namespace {

/// Runs jobs on up to harness_threads() workers; results keep job order and
/// the first failing job's exception (by index) is rethrown.
std::vector<MetricsReport> run_jobs(std::size_t count, const std::function<MetricsReport(std::size_t)>& job) {
  std::vector<MetricsReport> results(count);
  std::vector<std::exception_ptr> errors(count);
  const std::size_t workers = std::min(harness_threads(), count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

struct BuiltStructure {
  std::unique_ptr<LinkedDataImage> image;
  std::unique_ptr<TraversalProgram> program;
  std::vector<std::vector<std::uint64_t>> params;
  std::vector<std::uint64_t> expected;
};

BuiltStructure build_structure(const ExperimentConfig& c, PimAddressSpace& space) {
  const auto& im = c.impica;
  StructureOptions opts;
  opts.seed = c.seed;
  opts.leaf = im.leaf;
  opts.locality = im.locality;
  opts.compute_per_node = im.compute_per_node;
  BuiltStructure b;
  switch (im.structure) {
    case StructureKind::LinkedList: {
      auto w = gen_linked_list(space, im.list_nodes, opts, im.lists);
      for (std::size_t i = 0; i < w.heads.size(); ++i) {
        b.params.push_back({w.heads[i]});
        b.expected.push_back(w.tail_payloads[i]);
      }
      b.image = std::move(w.image);
      b.program = std::move(w.program);
      break;
    }
    case StructureKind::HashTable: {
      auto w = gen_hash_table(space, im.hash_buckets, im.hash_fill, opts);
      const std::unordered_set<std::uint64_t> present(w.keys.begin(), w.keys.end());
      for (std::uint64_t k : make_lookup_keys(w.keys, im.lookups, im.hit_fraction, derive_seed(c.seed, 0x10C)))
        b.params.push_back({k}), b.expected.push_back(present.count(k));
      b.image = std::move(w.image);
      b.program = std::move(w.program);
      break;
    }
    case StructureKind::BTree: {
      auto w = gen_btree(space, im.btree_keys, opts, im.btree_random_insert);
      for (std::uint64_t k : make_lookup_keys(w.keys, im.lookups, im.hit_fraction, derive_seed(c.seed, 0x10C)))
        b.params.push_back({k}), b.expected.push_back(std::binary_search(w.keys.begin(), w.keys.end(), k));
      b.image = std::move(w.image);
      b.program = std::move(w.program);
      break;
    }
  }
  return b;
}

RunReport run_impica(const ExperimentConfig& c, const ImpicaConfig& engine, const std::string& label, std::string* trace) {
  MemorySystem mem(c.timing);
  PimAddressSpace space(mem, 0);
  BuiltStructure s = build_structure(c, space);
  AddressTranslator translator(space.rpt(), space.four_level(), std::max<std::size_t>(1, engine.tlb_entries),
                               engine.page_table);
  std::vector<TraversalRequest> batch;
  for (auto& p : s.params) batch.push_back({s.program.get(), p, 0});
  const RunResult r = run_traversals(engine, mem, translator, *s.image, batch);

  std::uint64_t mismatches = 0;
  std::uint64_t steps = 0;
  double latency = 0.0;
  for (std::size_t i = 0; i < r.traversals.size(); ++i) {
    const auto& t = r.traversals[i];
    if (t.fault || t.results.size() != 1 || t.results[0] != s.expected[i]) ++mismatches;
    steps += t.steps;
    latency += double(t.finish - t.submit);
  }
  RunReport out;
  out.experiment = c.name;
  out.mechanism = label;
  out.seed = c.seed;
  out.add("traversals", double(r.traversals.size()));
  out.add("makespan", double(r.makespan));
  out.add("mean-traversal-latency", r.traversals.empty() ? 0.0 : latency / double(r.traversals.size()));
  out.add("steps", double(steps));
  out.add("loads", double(r.engine.loads));
  out.add("data-requests", double(r.engine.data_requests));
  out.add("walk-requests", double(r.engine.walk_requests));
  out.add("tlb-hits", double(r.translation.tlb_hits));
  out.add("tlb-misses", double(r.translation.tlb_misses));
  out.add("tlb-mpki", steps == 0 ? 0.0 : 1000.0 * double(r.translation.tlb_misses) / double(steps));
  out.add("walk-accesses", double(r.translation.walk_accesses));
  out.add("cache-hits", double(r.engine.cache_hits));
  out.add("cache-misses", double(r.engine.cache_misses));
  out.add("access-stalls", double(r.engine.access_stalls));
  out.add("context-switches", double(r.engine.context_switches));
  out.add("address-engine-utilization", r.address_engine_utilization);
  out.add("backpressure", double(r.engine.backpressure));
  out.add("faults", double(r.engine.faults));
  out.add("result-mismatches", double(mismatches));
  out.add("off-chip-bytes", double(mem.off_chip_traffic()));
  out.add("internal-bytes", double(mem.internal_traffic()));
  out.add("requests-cpu", double(mem.request_count(RequesterKind::CpuCore)));
  out.add("requests-pim", double(mem.request_count(RequesterKind::PimCore)));
  out.add("requests-walker", double(mem.request_count(RequesterKind::PageWalker)));
  if (trace) *trace += trace_to_json_lines(r.trace);
  return out;
}

std::string impica_label(PageTableKind kind) { return kind == PageTableKind::Rpt ? "impica-rpt" : "impica-four-level"; }

RunReport run_coherence(const ExperimentConfig& c, Mechanism m, const CoherenceWorkload& w, std::string* trace) {
  SystemConfig sc;
  sc.mechanism = m;
  sc.timing = c.timing;
  sc.max_rollbacks = c.coherence.max_rollbacks;
  sc.seed = c.seed;
  System system(sc, w);
  system.run();
  RunReport out;
  out.experiment = c.name;
  out.mechanism = std::string(mechanism_name(m));
  out.seed = c.seed;
  append_coherence_metrics(out, system);
  if (trace) *trace += system.kernel_log_json_lines();
  return out;
}

}  // namespace

void append_coherence_metrics(RunReport& out, const System& system) {
  const auto& s = system.stats();
  const auto& mem = system.memory();
  out.add("makespan", double(s.makespan));
  out.add("cpu-finish", double(s.cpu_finish));
  out.add("pim-finish", double(s.pim_finish));
  out.add("off-chip-bytes", double(mem.off_chip_traffic()));
  out.add("off-chip-demand-bytes", double(mem.off_chip_bytes(TrafficClass::Demand)));
  out.add("off-chip-coherence-bytes", double(mem.off_chip_bytes(TrafficClass::Coherence)));
  out.add("off-chip-signature-bytes", double(mem.off_chip_bytes(TrafficClass::Signature)));
  out.add("off-chip-packet-bytes", double(mem.off_chip_bytes(TrafficClass::Packet)));
  out.add("internal-bytes", double(mem.internal_traffic()));
  out.add("messages", double(mem.message_count()));
  out.add("requests-cpu", double(mem.request_count(RequesterKind::CpuCore)));
  out.add("requests-pim", double(mem.request_count(RequesterKind::PimCore)));
  out.add("cpu-l1-hits", double(s.cpu_l1_hits));
  out.add("cpu-l1-misses", double(s.cpu_l1_misses));
  out.add("l2-hits", double(s.l2_hits));
  out.add("l2-misses", double(s.l2_misses));
  out.add("pim-l1-hits", double(s.pim_l1_hits));
  out.add("pim-l1-misses", double(s.pim_l1_misses));
  out.add("uncached-accesses", double(s.uncached_accesses));
  out.add("blocked-cycles", double(s.blocked_cycles));
  out.add("flushed-lines", double(s.flushed_lines));
  out.add("invalidations", double(s.invalidations));
  out.add("kernels", double(s.kernels));
  out.add("commits", double(s.commits));
  out.add("locked-commits", double(s.locked_commits));
  out.add("rollbacks", double(s.rollbacks));
  out.add("false-positive-rollbacks", double(s.false_positive_rollbacks));
  out.add("eviction-rollbacks", double(s.eviction_rollbacks));
  out.add("lock-conflict-rollbacks", double(s.lock_conflict_rollbacks));
  out.add("events", double(s.events));
}

CoherenceWorkload build_coherence_workload(const ExperimentConfig& c) {
  const auto& co = c.coherence;
  switch (co.workload) {
    case CoherenceWorkloadKind::Graph: {
      GraphParams p = co.graph;
      p.seed = c.seed;
      if (co.edge_list.empty()) return gen_graph_kernel(p);
      std::ifstream in(co.edge_list);
      if (!in) throw IoError("cannot open edge list " + co.edge_list);
      const auto edges = read_edge_list(in);
      return gen_graph_kernel(p, edges);
    }
    case CoherenceWorkloadKind::Htap: {
      HtapParams p = co.htap;
      p.seed = c.seed;
      return gen_htap(p);
    }
    case CoherenceWorkloadKind::Small: {
      SmallParams p = co.small;
      p.seed = c.seed;
      return gen_small_random(p);
    }
  }
  throw ConfigError("unknown coherence workload");
}

MetricsReport run_experiment(const ExperimentConfig& c, std::string* trace) {
  c.validate();
  MetricsReport report;
  switch (c.kind) {
    case ExperimentKind::ImpicaMicro:
      report.runs.push_back(run_impica(c, c.impica.engine, impica_label(c.impica.engine.page_table), trace));
      break;
    case ExperimentKind::ImpicaSensitivity: {
      for (std::size_t tlb : c.impica.sensitivity_tlb_sizes) {
        double rpt_walks = 0.0;
        for (PageTableKind kind : {PageTableKind::Rpt, PageTableKind::FourLevel}) {
          ImpicaConfig e = c.impica.engine;
          e.page_table = kind;
          e.tlb_enabled = tlb != 0;
          e.tlb_entries = std::max<std::size_t>(1, tlb);
          RunReport r = run_impica(c, e, impica_label(kind) + "/tlb-" + std::to_string(tlb), trace);
          const double walks = r.get("walk-accesses");
          if (kind == PageTableKind::Rpt) rpt_walks = walks;
          else r.add("walk-ratio-vs-rpt", rpt_walks == 0.0 ? 0.0 : walks / rpt_walks);
          report.runs.push_back(std::move(r));
        }
      }
      break;
    }
    case ExperimentKind::Coherence: {
      const CoherenceWorkload w = build_coherence_workload(c);
      report.runs.push_back(run_coherence(c, c.coherence.mechanism, w, trace));
      break;
    }
  }
  return report;
}

MetricsReport compare_mechanisms(const ExperimentConfig& base, std::vector<Mechanism> mechanisms) {
  if (mechanisms.empty()) throw ConfigError("compare needs at least one mechanism");
  base.validate();
  std::vector<Mechanism> arms = {Mechanism::CpuOnly};
  for (Mechanism m : mechanisms)
    if (std::find(arms.begin(), arms.end(), m) == arms.end()) arms.push_back(m);
  const CoherenceWorkload w = build_coherence_workload(base);
  auto results = run_jobs(arms.size(), [&](std::size_t i) {
    MetricsReport r;
    r.runs.push_back(run_coherence(base, arms[i], w, nullptr));
    return r;
  });
  MetricsReport out;
  for (auto& r : results) out.append(r);
  const RunReport& cpu = out.runs.front();
  const double cpu_time = cpu.get("makespan");
  const double cpu_bytes = cpu.get("off-chip-bytes");
  for (auto& run : out.runs) {
    const double t = run.get("makespan");
    const double b = run.get("off-chip-bytes");
    run.add("speedup", t == 0.0 ? 1.0 : cpu_time / t);
    run.add("normalized-traffic", cpu_bytes == 0.0 ? (b == 0.0 ? 1.0 : 0.0) : b / cpu_bytes);
  }
  return out;
}

MetricsReport sweep(const ExperimentConfig& base, std::string_view parameter, const std::vector<std::string>& values,
                    const std::vector<std::uint64_t>& seeds) {
  std::vector<ExperimentConfig> configs;
  const std::vector<std::string> vals = parameter.empty() ? std::vector<std::string>{""} : values;
  if (!parameter.empty() && vals.empty()) throw ConfigError("sweep over `" + std::string(parameter) + "` has no values");
  const std::vector<std::uint64_t> seed_list = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : seeds;
  for (const auto& v : vals) {
    for (std::uint64_t seed : seed_list) {
      ExperimentConfig c = base;
      if (!parameter.empty()) {
        c.set(parameter, v);
        c.name = base.name + "[" + std::string(parameter) + "=" + v + "]";
      }
      c.seed = seed;
      c.validate();
      configs.push_back(std::move(c));
    }
  }
  auto results = run_jobs(configs.size(), [&](std::size_t i) { return run_experiment(configs[i]); });
  MetricsReport out;
  for (auto& r : results) out.append(r);
  return out;
}

}  // namespace pimbench
