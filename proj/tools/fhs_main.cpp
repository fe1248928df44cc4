#include <CLI11.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "fhs/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fhs: a deterministic simulator of heterogeneous federated learning"};
  app.require_subcommand(1);

  fhs::harness::CliOptions opts;
  std::uint64_t seed_value = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd, bool config_required = true) {
    cmd->add_option("--config", opts.config_path, "experiment config (JSON) or run manifest")
        ->required(config_required);
    cmd->add_option("--out", opts.out_override, "override the config's output directory");
    cmd->add_option("--seed-override", seed_value, "override the config's root seed")
        ->each([&](const std::string&) { seed_set = true; });
  };

  auto* run = app.add_subcommand("run", "run one experiment and write its artifacts");
  add_common(run);

  auto* sweep = app.add_subcommand("sweep", "run once per value of a numeric config field");
  add_common(sweep);
  std::string axis;
  std::vector<double> values;
  sweep->add_option("--axis", axis, "dotted config field, e.g. federation.local_steps")
      ->required();
  sweep->add_option("--values", values, "values to sweep over")->required()->delimiter(',');

  auto* plotdata = app.add_subcommand("plotdata", "split a metrics CSV into per-method curves");
  std::string metrics_csv, plot_out = ".";
  plotdata->add_option("--metrics", metrics_csv, "metrics.csv from a run")->required();
  plotdata->add_option("--out", plot_out, "directory for the curve files");

  auto* partition = app.add_subcommand("partition", "dump per-client class histograms");
  add_common(partition);
  std::string partition_out;
  partition->add_option("--histogram-out", partition_out, "write CSV here instead of stdout");

  auto* bound = app.add_subcommand("bound", "evaluate the generalization bound on checkpoints");
  add_common(bound);
  std::string ckpt_dir, bound_out;
  bound->add_option("--checkpoints", ckpt_dir, "directory with global.fhs and client_*.fhs")
      ->required();
  bound->add_option("--report-out", bound_out, "write the report here instead of stdout");

  CLI11_PARSE(app, argc, argv);
  if (seed_set) opts.seed_override = seed_value;

  if (run->parsed()) return fhs::harness::cli_run(opts);
  if (sweep->parsed()) return fhs::harness::cli_sweep(opts, axis, values);
  if (plotdata->parsed()) return fhs::harness::cli_plotdata(metrics_csv, plot_out);
  if (partition->parsed()) return fhs::harness::cli_partition(opts, partition_out);
  if (bound->parsed()) return fhs::harness::cli_bound(opts, ckpt_dir, bound_out);
  return fhs::harness::kExitConfig;
}
