#pragma once

// Experiment configuration, execution and export.
//
// Config files are `key = value` lines with dotted keys; a `[section]`
// header prefixes the keys below it. `config-version` is required and
// unknown keys are rejected.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pimbench/coherence.hpp"
#include "pimbench/impica.hpp"
#include "pimbench/memsys.hpp"
#include "pimbench/rpt.hpp"
#include "pimbench/workloads.hpp"

namespace pimbench {

inline constexpr int kConfigVersion = 1;

enum class ExperimentKind : std::uint8_t { ImpicaMicro, ImpicaSensitivity, Coherence };
enum class StructureKind : std::uint8_t { LinkedList, HashTable, BTree };
enum class CoherenceWorkloadKind : std::uint8_t { Graph, Htap, Small };

std::string_view experiment_kind_name(ExperimentKind k);
std::string_view structure_name(StructureKind k);
std::string_view coherence_workload_name(CoherenceWorkloadKind k);

struct ImpicaExperiment {
  StructureKind structure = StructureKind::LinkedList;
  std::size_t list_nodes = 2048;
  std::size_t lists = 8;
  std::size_t hash_buckets = 1 << 14;
  std::size_t hash_fill = 3 << 13;  // 1.5 x buckets
  std::size_t btree_keys = 100000;
  bool btree_random_insert = false;
  std::size_t lookups = 10000;
  double hit_fraction = 0.5;
  double locality = 0.0;
  Cycle compute_per_node = 11;
  PageSize leaf = PageSize::Small4K;
  ImpicaConfig engine;
  /// TLB sizes visited by the sensitivity experiment (0 disables the TLB).
  std::vector<std::size_t> sensitivity_tlb_sizes = {0, 8, 32, 128};
};

struct CoherenceExperiment {
  Mechanism mechanism = Mechanism::LazyPim;
  CoherenceWorkloadKind workload = CoherenceWorkloadKind::Graph;
  GraphParams graph;
  HtapParams htap;
  SmallParams small;
  std::string edge_list;
  std::uint32_t max_rollbacks = 3;
  std::vector<Mechanism> compare = {Mechanism::FG, Mechanism::CG, Mechanism::NC, Mechanism::LazyPim, Mechanism::Ideal};
};

struct ExperimentConfig {
  int config_version = kConfigVersion;
  std::string name = "experiment";
  ExperimentKind kind = ExperimentKind::Coherence;
  std::uint64_t seed = 1;
  TimingConfig timing;
  ImpicaExperiment impica;
  CoherenceExperiment coherence;
  std::string sweep_parameter;
  std::vector<std::string> sweep_values;
  std::vector<std::uint64_t> sweep_seeds;
  bool trace = false;

  /// Applies one `key = value` setting. Throws ConfigError for unknown keys
  /// or malformed values.
  void set(std::string_view key, std::string_view value);
  /// Replaces workload sizes with the paper-sized presets.
  void apply_paper_scale();
  void validate() const;

  static ExperimentConfig parse(std::istream& in, std::string_view origin = "<config>");
  static ExperimentConfig load(const std::string& path);
  static std::vector<std::string> known_keys();
};

struct Metric {
  std::string name;
  double value = 0.0;
  bool operator==(const Metric&) const = default;
};

/// Metrics of one simulator run.
struct RunReport {
  std::string experiment;
  std::string mechanism;
  std::uint64_t seed = 0;
  std::vector<Metric> metrics;

  void add(std::string name, double value) { metrics.push_back({std::move(name), value}); }
  std::optional<double> find(std::string_view name) const;
  /// Throws SimError when absent.
  double get(std::string_view name) const;
  bool operator==(const RunReport&) const = default;
};

struct MetricsReport {
  std::vector<RunReport> runs;

  const RunReport* find(std::string_view mechanism, std::uint64_t seed) const;
  void append(const MetricsReport& other) { runs.insert(runs.end(), other.runs.begin(), other.runs.end()); }
  bool operator==(const MetricsReport&) const = default;
};

enum class ExportFormat : std::uint8_t { Csv, Json };
ExportFormat parse_format(std::string_view s);

/// Columns: experiment, mechanism, seed, metric, value.
std::string to_csv(const MetricsReport& report);
std::string to_json(const MetricsReport& report);
MetricsReport report_from_json(std::string_view text);
/// Writes the rendered report; throws IoError naming the path on failure.
void export_report(const MetricsReport& report, ExportFormat format, const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

/// Single configured run. For impica-sensitivity this is one run per
/// (page table, TLB size) variant. `trace`, when given, receives JSON lines.
MetricsReport run_experiment(const ExperimentConfig& config, std::string* trace = nullptr);

/// One coherence run per mechanism on a shared seed, plus the CPU-only
/// arm; adds speedup and normalized-traffic metrics against CPU-only.
MetricsReport compare_mechanisms(const ExperimentConfig& base, std::vector<Mechanism> mechanisms);

/// Runs the base config once per (parameter value, seed); the experiment
/// name records the value. Aggregated in (value, seed) order.
MetricsReport sweep(const ExperimentConfig& base, std::string_view parameter, const std::vector<std::string>& values,
                    const std::vector<std::uint64_t>& seeds);

/// Worker count from PIMBENCH_THREADS (default: hardware concurrency).
std::size_t harness_threads();

/// Coherence metrics of a finished System, in export order.
void append_coherence_metrics(RunReport& out, const System& system);

/// Builds the configured coherence workload.
CoherenceWorkload build_coherence_workload(const ExperimentConfig& config);

}  // namespace pimbench
