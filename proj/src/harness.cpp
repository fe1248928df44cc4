#include "fhs/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fhs/checkpoint.hpp"
#include "fhs/divergence.hpp"
#include "fhs/rng.hpp"

namespace fhs::harness {

namespace fs = std::filesystem;
using nlohmann::json;

fed::ExperimentSetup build_setup(const ExperimentConfig& cfg) {
  fed::ExperimentSetup setup;
  setup.sgd = cfg.sgd;

  switch (cfg.dataset.type) {
    case DatasetConfig::Type::toy: {
      auto toy = data::make_toy_concept_shift(cfg.dataset.n_per_class,
                                              derive_seed(cfg.seed, "dataset"));
      setup.clients = std::move(toy.clients);
      setup.test = std::move(toy.test);
      break;
    }
    case DatasetConfig::Type::idx: {
      auto train = data::load_idx(cfg.dataset.images, cfg.dataset.labels);
      setup.test = data::load_idx(cfg.dataset.test_images, cfg.dataset.test_labels);
      if (train.n_classes != setup.test.n_classes) {
        int n = std::max(train.n_classes, setup.test.n_classes);
        train.n_classes = n;
        setup.test.n_classes = n;
      }
      data::PartitionSpec spec{cfg.federation.K, cfg.partition.alpha,
                               cfg.partition.train_fraction, derive_seed(cfg.seed, "partition")};
      setup.clients = data::dirichlet_partition(train, spec);
      break;
    }
    case DatasetConfig::Type::synthetic: {
      // one mixture draw, split into train and held-out test so both parts
      // share the class geometry
      auto all = data::make_gaussian_mixture(cfg.dataset.n_train + cfg.dataset.n_test,
                                             cfg.dataset.n_classes, cfg.dataset.input_dim,
                                             cfg.dataset.center_scale,
                                             derive_seed(cfg.seed, "dataset"));
      std::vector<int> train_idx, test_idx;
      for (int i = 0; i < cfg.dataset.n_train; ++i) train_idx.push_back(i);
      for (int i = cfg.dataset.n_train; i < all.n(); ++i) test_idx.push_back(i);
      auto train = data::take(all, train_idx);
      setup.test = data::take(all, test_idx);
      data::PartitionSpec spec{cfg.federation.K, cfg.partition.alpha,
                               cfg.partition.train_fraction, derive_seed(cfg.seed, "partition")};
      setup.clients = data::dirichlet_partition(train, spec);
      break;
    }
  }

  const int input_dim = setup.test.dim();
  const int n_classes = setup.test.n_classes;
  setup.arch = models::MlpSpec{input_dim, cfg.model.hidden, cfg.model.latent_dim, n_classes};
  setup.gen_arch = models::GeneratorSpec{n_classes, cfg.model.latent_dim, cfg.model.gen_embed,
                                         cfg.model.gen_hidden};
  return setup;
}

void write_metrics_csv(const std::string& path, const std::string& method,
                       const std::vector<fed::RoundMetrics>& rounds) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "round,method,global_acc,global_loss,mean_client_acc,wall_ms\n";
  char buf[256];
  for (const auto& r : rounds) {
    double mean_client = 0;
    for (double a : r.per_client_accuracy) mean_client += a;
    if (!r.per_client_accuracy.empty())
      mean_client /= static_cast<double>(r.per_client_accuracy.size());
    std::snprintf(buf, sizeof buf, "%d,%s,%.6f,%.6f,%.6f,%ld\n", r.round, method.c_str(),
                  r.global_accuracy, r.global_loss, mean_client, r.wall_ms);
    f << buf;
  }
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<MetricsRow> rows;
  std::string line;
  bool first = true;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("round,", 0) == 0) {
      first = false;
      continue;  // header (possibly repeated when files were concatenated)
    }
    if (first && lineno == 1)
      throw std::runtime_error(path + ": missing metrics header");
    std::istringstream ls(line);
    MetricsRow r;
    std::string field;
    try {
      std::getline(ls, field, ',');
      r.round = std::stoi(field);
      std::getline(ls, r.method, ',');
      std::getline(ls, field, ',');
      r.global_acc = std::stod(field);
      std::getline(ls, field, ',');
      r.global_loss = std::stod(field);
      std::getline(ls, field, ',');
      r.mean_client_acc = std::stod(field);
      std::getline(ls, field, ',');
      r.wall_ms = std::stol(field);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed metrics row");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

ExperimentConfig load_with_overrides(const CliOptions& opts) {
  ExperimentConfig cfg = load_config_file(opts.config_path);
  if (!opts.out_override.empty()) cfg.output_dir = opts.out_override;
  if (opts.seed_override) cfg.seed = *opts.seed_override;
  return cfg;
}

std::string client_checkpoint_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "client_%03d.fhs", k);
  return buf;
}

void write_manifest(const ExperimentConfig& cfg, const std::vector<std::string>& artifacts,
                    const std::string& path) {
  json m;
  m["config"] = json::parse(serialize_config(cfg));
  m["config_hash"] = config_hash_hex(cfg);
  m["root_seed"] = cfg.seed;
  m["derived_seeds"] = {{"dataset", derive_seed(cfg.seed, "dataset")},
                        {"partition", derive_seed(cfg.seed, "partition")},
                        {"federation", derive_seed(cfg.seed, "federation")},
                        {"bound", derive_seed(cfg.seed, "bound")}};
  m["artifacts"] = artifacts;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << m.dump(2) << "\n";
}

int run_into(const ExperimentConfig& cfg_in, const std::string& out_dir,
             double* final_acc_out = nullptr) {
  ExperimentConfig cfg = cfg_in;
  cfg.output_dir = out_dir;
  fed::ExperimentSetup setup = build_setup(cfg);

  fed::FederationConfig fcfg = cfg.federation;
  fcfg.seed = derive_seed(cfg.seed, "federation");
  fed::ExperimentResult result = fed::run_experiment(fcfg, setup);

  fs::create_directories(out_dir);
  std::vector<std::string> artifacts;

  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  write_metrics_csv(metrics_path, fed::to_string(cfg.federation.method), result.rounds);
  artifacts.push_back("metrics.csv");

  save_checkpoint((fs::path(out_dir) / "global.fhs").string(), result.global.named_tensors());
  artifacts.push_back("global.fhs");
  for (int k = 0; k < static_cast<int>(result.locals.size()); ++k) {
    std::string name = client_checkpoint_name(k);
    save_checkpoint((fs::path(out_dir) / name).string(),
                    result.locals[static_cast<std::size_t>(k)].named_tensors());
    artifacts.push_back(name);
  }

  if (cfg.bound_eval.enabled) {
    auto eval_cfg = cfg.bound_eval.to_eval_config(derive_seed(cfg.seed, "bound"));
    auto report = divergence::evaluate_theorem1(setup.clients, result.global, result.locals,
                                                eval_cfg);
    divergence::write_report(report, (fs::path(out_dir) / "bound_report.txt").string());
    artifacts.push_back("bound_report.txt");
  }

  write_manifest(cfg, artifacts, (fs::path(out_dir) / "manifest.json").string());

  const double final_acc = result.rounds.empty() ? 0.0 : result.rounds.back().global_accuracy;
  if (final_acc_out) *final_acc_out = final_acc;
  std::printf("run complete: method=%s rounds=%d final_acc=%.6f out=%s\n",
              fed::to_string(cfg.federation.method).c_str(), cfg.federation.rounds, final_acc,
              out_dir.c_str());
  return kExitOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}

}  // namespace

int cli_run(const CliOptions& opts) {
  return guarded([&] {
    ExperimentConfig cfg = load_with_overrides(opts);
    return run_into(cfg, cfg.output_dir);
  });
}

int cli_sweep(const CliOptions& opts, const std::string& axis,
              const std::vector<double>& values) {
  return guarded([&] {
    if (values.empty()) throw std::invalid_argument("sweep: no values given");
    ExperimentConfig base = load_with_overrides(opts);

    // the axis is a dotted path into the config JSON; rewriting the JSON and
    // re-parsing keeps every validation rule in force
    json base_json = json::parse(serialize_config(base));
    json::json_pointer ptr;
    {
      std::string p = "/" + axis;
      for (auto& c : p)
        if (c == '.') c = '/';
      ptr = json::json_pointer(p);
    }
    if (!base_json.contains(ptr))
      throw ConfigError(axis, "unknown sweep axis (not a config field)");
    if (!base_json.at(ptr).is_number())
      throw ConfigError(axis, "sweep axis must name a numeric field");
    const bool integral = base_json.at(ptr).is_number_integer();

    std::string axis_slug = axis;
    for (auto& c : axis_slug)
      if (c == '.') c = '_';

    fs::create_directories(base.output_dir);
    std::vector<std::pair<double, double>> summary;
    for (double v : values) {
      json patched = base_json;
      if (integral) {
        if (v != std::floor(v))
          throw ConfigError(axis, "field is integral but value " + std::to_string(v) + " is not");
        patched[ptr] = static_cast<std::int64_t>(v);
      } else {
        patched[ptr] = v;
      }
      ExperimentConfig cfg = parse_config(patched.dump());
      char sub[64];
      std::snprintf(sub, sizeof sub, "%s_%g", axis_slug.c_str(), v);
      double final_acc = 0;
      run_into(cfg, (fs::path(base.output_dir) / sub).string(), &final_acc);
      summary.emplace_back(v, final_acc);
    }

    const std::string summary_path = (fs::path(base.output_dir) / "sweep_summary.csv").string();
    std::ofstream f(summary_path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + summary_path);
    f << "value,final_acc\n";
    char buf[64];
    for (auto [v, acc] : summary) {
      std::snprintf(buf, sizeof buf, "%g,%.6f\n", v, acc);
      f << buf;
    }
    std::printf("sweep complete: axis=%s runs=%zu summary=%s\n", axis.c_str(), values.size(),
                summary_path.c_str());
    return kExitOk;
  });
}

int cli_plotdata(const std::string& metrics_csv, const std::string& out_dir) {
  return guarded([&] {
    auto rows = read_metrics_csv(metrics_csv);
    if (rows.empty()) throw std::invalid_argument(metrics_csv + ": no rows");

    std::vector<std::string> methods;
    for (const auto& r : rows)
      if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
        methods.push_back(r.method);

    fs::create_directories(out_dir);
    for (const auto& method : methods) {
      std::vector<std::pair<int, double>> series;
      for (const auto& r : rows)
        if (r.method == method) series.emplace_back(r.round, r.global_acc);
      std::sort(series.begin(), series.end());
      const std::string path = (fs::path(out_dir) / ("curve_" + method + ".csv")).string();
      std::ofstream f(path, std::ios::trunc);
      if (!f) throw std::runtime_error("cannot open " + path);
      f << "round,accuracy\n";
      char buf[64];
      for (auto [round, acc] : series) {
        std::snprintf(buf, sizeof buf, "%d,%.6f\n", round, acc);
        f << buf;
      }
    }
    std::printf("plotdata complete: %zu series under %s\n", methods.size(), out_dir.c_str());
    return kExitOk;
  });
}

int cli_partition(const CliOptions& opts, const std::string& out_path) {
  return guarded([&] {
    ExperimentConfig cfg = load_with_overrides(opts);
    fed::ExperimentSetup setup = build_setup(cfg);

    std::ostringstream os;
    os << "client,n";
    const int n_classes = setup.test.n_classes;
    for (int c = 0; c < n_classes; ++c) os << ",c" << c;
    os << "\n";
    for (const auto& client : setup.clients) {
      os << client.client_id << ',' << client.data.n();
      for (long cnt : client.class_histogram) os << ',' << cnt;
      os << "\n";
    }
    if (out_path.empty()) {
      std::fputs(os.str().c_str(), stdout);
    } else {
      std::ofstream f(out_path, std::ios::trunc);
      if (!f) throw std::runtime_error("cannot open " + out_path);
      f << os.str();
    }
    return kExitOk;
  });
}

int cli_bound(const CliOptions& opts, const std::string& checkpoint_dir,
              const std::string& out_path) {
  return guarded([&] {
    ExperimentConfig cfg = load_with_overrides(opts);
    fed::ExperimentSetup setup = build_setup(cfg);

    auto load_model = [&](const std::string& name) {
      auto tensors = load_checkpoint((fs::path(checkpoint_dir) / name).string());
      return models::ModelParams::from_named_tensors(setup.arch, tensors);
    };
    models::ModelParams global = load_model("global.fhs");
    std::vector<models::ModelParams> locals;
    for (int k = 0; k < cfg.federation.K; ++k)
      locals.push_back(load_model(client_checkpoint_name(k)));

    auto eval_cfg = cfg.bound_eval.to_eval_config(derive_seed(cfg.seed, "bound"));
    auto report = divergence::evaluate_theorem1(setup.clients, global, locals, eval_cfg);
    if (out_path.empty()) {
      std::fputs(divergence::format_report(report).c_str(), stdout);
    } else {
      divergence::write_report(report, out_path);
      std::printf("bound report written to %s\n", out_path.c_str());
    }
    return kExitOk;
  });
}

}  // namespace fhs::harness
