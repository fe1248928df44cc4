#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fhs/config.hpp"
#include "fhs/federation.hpp"

namespace fhs::harness {

// materializes datasets and architecture from a validated config; all
// randomness is derived from the config's root seed by name
fed::ExperimentSetup build_setup(const ExperimentConfig& cfg);

// metrics CSV row (header: round,method,global_acc,global_loss,mean_client_acc,wall_ms)
struct MetricsRow {
  int round = 0;
  std::string method;
  double global_acc = 0;
  double global_loss = 0;
  double mean_client_acc = 0;
  long wall_ms = 0;
};
void write_metrics_csv(const std::string& path, const std::string& method,
                       const std::vector<fed::RoundMetrics>& rounds);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// exit codes shared by the CLI: 0 ok, 2 invalid config/input, 1 runtime failure
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

struct CliOptions {
  std::string config_path;
  std::string out_override;                   // --out
  std::optional<std::uint64_t> seed_override;  // --seed-override
};

// run one experiment: metrics.csv, manifest.json, model checkpoints and
// (when enabled) the bound report land in the output directory
int cli_run(const CliOptions& opts);

// one sub-run per value of a numeric config field (dotted path), plus a
// consolidated summary CSV "value,final_acc"
int cli_sweep(const CliOptions& opts, const std::string& axis,
              const std::vector<double>& values);

// split a metrics CSV into per-method (round, accuracy) series files
int cli_plotdata(const std::string& metrics_csv, const std::string& out_dir);

// dump the partition's per-client class histograms as CSV
int cli_partition(const CliOptions& opts, const std::string& out_path);

// standalone bound evaluation on checkpoints saved by a previous run
int cli_bound(const CliOptions& opts, const std::string& checkpoint_dir,
              const std::string& out_path);

}  // namespace fhs::harness
