// pimbench: run, compare and sweep experiments.
//
// Exit codes: 0 success, 1 config error, 2 invariant violation, 3 I/O error.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pimbench/harness.hpp"

namespace {

using namespace pimbench;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "csv";
  bool paper_scale = false;
  bool trace = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Override the experiment seed");
  cmd->add_option("--out", o.out, "Report path (default: stdout)");
  cmd->add_option("--format", o.format, "Report format")->check(CLI::IsMember({"csv", "json"}));
  cmd->add_flag("--paper-scale", o.paper_scale, "Use paper-sized workload presets");
  cmd->add_flag("--trace", o.trace, "Write JSON-lines traces next to the report");
  cmd->add_option("--set", o.overrides, "Extra `key=value` setting, applied after the config file");
}

ExperimentConfig resolve(const CommonOptions& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config_path);
  if (o.paper_scale) c.apply_paper_scale();
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got `" + kv + "`");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (o.trace) c.trace = true;
  c.validate();
  return c;
}

void emit(const MetricsReport& report, const CommonOptions& o, const std::string& trace) {
  const ExportFormat f = parse_format(o.format);
  if (o.out.empty()) {
    std::cout << (f == ExportFormat::Csv ? to_csv(report) : to_json(report));
    if (!trace.empty()) std::cerr << trace;
  } else {
    export_report(report, f, o.out);
    if (!trace.empty()) write_text_file(o.out + ".trace.jsonl", trace);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Processing-in-memory coherence and pointer-chasing simulator"};
  app.require_subcommand(1);

  CommonOptions run_opts, cmp_opts, sweep_opts;
  std::vector<std::string> mechanisms;
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  std::vector<std::uint64_t> sweep_seeds;

  auto* run = app.add_subcommand("run", "Run one configured experiment");
  add_common(run, run_opts);
  auto* cmp = app.add_subcommand("compare", "Run every coherence mechanism on one seed");
  add_common(cmp, cmp_opts);
  cmp->add_option("--mechanisms", mechanisms, "Mechanisms to compare (CPU-only is always added)")->delimiter(',');
  auto* swp = app.add_subcommand("sweep", "Run a config over parameter values and seeds");
  add_common(swp, sweep_opts);
  swp->add_option("--param", sweep_param, "Config key to vary");
  swp->add_option("--values", sweep_values, "Values for the varied key")->delimiter(',');
  swp->add_option("--seeds", sweep_seeds, "Seeds to run")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) {
      const ExperimentConfig c = resolve(run_opts);
      std::string trace;
      const MetricsReport r = run_experiment(c, c.trace ? &trace : nullptr);
      emit(r, run_opts, trace);
    } else if (cmp->parsed()) {
      const ExperimentConfig c = resolve(cmp_opts);
      std::vector<Mechanism> arms = c.coherence.compare;
      if (!mechanisms.empty()) {
        arms.clear();
        for (const auto& m : mechanisms) arms.push_back(parse_mechanism(m));
      }
      emit(compare_mechanisms(c, arms), cmp_opts, {});
    } else if (swp->parsed()) {
      const ExperimentConfig c = resolve(sweep_opts);
      const std::string param = sweep_param.empty() ? c.sweep_parameter : sweep_param;
      const auto values = sweep_values.empty() ? c.sweep_values : sweep_values;
      auto seeds = sweep_seeds.empty() ? c.sweep_seeds : sweep_seeds;
      if (seeds.empty() && sweep_opts.seed) seeds.push_back(*sweep_opts.seed);
      emit(sweep(c, param, values, seeds), sweep_opts, {});
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "simulation aborted: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
