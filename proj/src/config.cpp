#include "fhs/config.hpp"

#include <json.hpp>

#include <fstream>
#include <iterator>
#include <set>

namespace fhs::harness {

using nlohmann::json;

divergence::BoundEvalConfig BoundConfig::to_eval_config(std::uint64_t seed) const {
  divergence::BoundEvalConfig out;
  out.hypothesis.kind = divergence::hypothesis_kind_from_string(hypothesis);
  out.hypothesis.steps = steps;
  out.hypothesis.lr = lr;
  out.hypothesis.hidden = hidden;
  out.hypothesis.batch_size = batch_size;
  out.delta = delta;
  out.lambda_budget = lambda_budget;
  if (m_mode == "min")
    out.m_mode = divergence::SampleCountMode::min_m;
  else if (m_mode == "per_pair")
    out.m_mode = divergence::SampleCountMode::per_pair;
  else
    throw ConfigError("bound_eval.m_mode", "expected \"min\" or \"per_pair\"");
  out.seed = seed;
  return out;
}

namespace {

void reject_unknown(const json& obj, const std::string& prefix,
                    const std::set<std::string>& known) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError(prefix.empty() ? it.key() : prefix + "." + it.key(), "unknown field");
}

template <typename T>
T get_or(const json& obj, const std::string& prefix, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(prefix.empty() ? key : prefix + "." + key, "wrong type");
  }
}

void parse_dataset(const json& j, DatasetConfig& d) {
  reject_unknown(j, "dataset",
                 {"type", "n_per_class", "images", "labels", "test_images", "test_labels",
                  "n_classes", "input_dim", "n_train", "n_test", "center_scale"});
  std::string type = get_or<std::string>(j, "dataset", "type", "toy");
  if (type == "toy")
    d.type = DatasetConfig::Type::toy;
  else if (type == "idx")
    d.type = DatasetConfig::Type::idx;
  else if (type == "synthetic")
    d.type = DatasetConfig::Type::synthetic;
  else
    throw ConfigError("dataset.type", "expected \"toy\", \"idx\" or \"synthetic\"");
  d.n_per_class = get_or(j, "dataset", "n_per_class", d.n_per_class);
  d.images = get_or<std::string>(j, "dataset", "images", d.images);
  d.labels = get_or<std::string>(j, "dataset", "labels", d.labels);
  d.test_images = get_or<std::string>(j, "dataset", "test_images", d.test_images);
  d.test_labels = get_or<std::string>(j, "dataset", "test_labels", d.test_labels);
  d.n_classes = get_or(j, "dataset", "n_classes", d.n_classes);
  d.input_dim = get_or(j, "dataset", "input_dim", d.input_dim);
  d.n_train = get_or(j, "dataset", "n_train", d.n_train);
  d.n_test = get_or(j, "dataset", "n_test", d.n_test);
  d.center_scale = get_or(j, "dataset", "center_scale", d.center_scale);

  if (d.type == DatasetConfig::Type::toy && d.n_per_class < 1)
    throw ConfigError("dataset.n_per_class", "must be >= 1");
  if (d.type == DatasetConfig::Type::idx) {
    if (d.images.empty()) throw ConfigError("dataset.images", "required for type \"idx\"");
    if (d.labels.empty()) throw ConfigError("dataset.labels", "required for type \"idx\"");
    if (d.test_images.empty())
      throw ConfigError("dataset.test_images", "required for type \"idx\"");
    if (d.test_labels.empty())
      throw ConfigError("dataset.test_labels", "required for type \"idx\"");
  }
  if (d.type == DatasetConfig::Type::synthetic) {
    if (d.n_classes < 2) throw ConfigError("dataset.n_classes", "must be >= 2");
    if (d.input_dim < 1) throw ConfigError("dataset.input_dim", "must be >= 1");
    if (d.n_train < 1) throw ConfigError("dataset.n_train", "must be >= 1");
    if (d.n_test < 1) throw ConfigError("dataset.n_test", "must be >= 1");
    if (!(d.center_scale > 0)) throw ConfigError("dataset.center_scale", "must be > 0");
  }
}

void parse_federation(const json& j, fed::FederationConfig& f) {
  reject_unknown(j, "federation",
                 {"K", "active_fraction", "rounds", "local_steps", "method", "m_k", "w_gen",
                  "gen_steps", "gen_lr", "gen_batch", "lambda_grl", "lambda_decay_rounds",
                  "beta_kl", "weighted_aggregation", "persist_generators"});
  f.K = get_or(j, "federation", "K", f.K);
  f.active_fraction = get_or(j, "federation", "active_fraction", f.active_fraction);
  f.rounds = get_or(j, "federation", "rounds", f.rounds);
  f.local_steps = get_or(j, "federation", "local_steps", f.local_steps);
  if (j.contains("method")) {
    try {
      f.method = fed::method_from_string(j.at("method").get<std::string>());
    } catch (const json::exception&) {
      throw ConfigError("federation.method", "wrong type");
    } catch (const std::invalid_argument& e) {
      throw ConfigError("federation.method", e.what());
    }
  }
  f.m_k = get_or(j, "federation", "m_k", f.m_k);
  f.w_gen = get_or(j, "federation", "w_gen", f.w_gen);
  f.gen_steps = get_or(j, "federation", "gen_steps", f.gen_steps);
  f.gen_lr = get_or(j, "federation", "gen_lr", f.gen_lr);
  f.gen_batch = get_or(j, "federation", "gen_batch", f.gen_batch);
  f.lambda_grl = get_or(j, "federation", "lambda_grl", f.lambda_grl);
  f.lambda_decay_rounds = get_or(j, "federation", "lambda_decay_rounds", f.lambda_decay_rounds);
  f.beta_kl = get_or(j, "federation", "beta_kl", f.beta_kl);
  f.weighted_aggregation = get_or(j, "federation", "weighted_aggregation", f.weighted_aggregation);
  f.persist_generators = get_or(j, "federation", "persist_generators", f.persist_generators);
  try {
    fed::validate(f);
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    auto dot = msg.find(' ');
    throw ConfigError(msg.substr(0, msg.find(' ')), dot == std::string::npos ? msg : msg.substr(dot + 1));
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<json>", e.what());
  }
  if (!j.is_object()) throw ConfigError("<json>", "top level must be an object");
  if (j.contains("config")) j = j.at("config");  // manifest replay

  reject_unknown(j, "", {"seed", "output_dir", "dataset", "partition", "federation", "model",
                         "sgd", "bound_eval"});
  ExperimentConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "", "seed", cfg.seed);
  cfg.output_dir = get_or<std::string>(j, "", "output_dir", cfg.output_dir);

  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);

  if (j.contains("partition")) {
    const json& p = j.at("partition");
    reject_unknown(p, "partition", {"alpha", "train_fraction"});
    cfg.partition.alpha = get_or(p, "partition", "alpha", cfg.partition.alpha);
    cfg.partition.train_fraction =
        get_or(p, "partition", "train_fraction", cfg.partition.train_fraction);
    if (!(cfg.partition.alpha > 0)) throw ConfigError("partition.alpha", "must be > 0");
    if (!(cfg.partition.train_fraction > 0) || cfg.partition.train_fraction > 1)
      throw ConfigError("partition.train_fraction", "must be in (0,1]");
  }

  if (j.contains("federation")) parse_federation(j.at("federation"), cfg.federation);

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, "model", {"hidden", "latent_dim", "gen_hidden", "gen_embed"});
    cfg.model.hidden = get_or(m, "model", "hidden", cfg.model.hidden);
    cfg.model.latent_dim = get_or(m, "model", "latent_dim", cfg.model.latent_dim);
    cfg.model.gen_hidden = get_or(m, "model", "gen_hidden", cfg.model.gen_hidden);
    cfg.model.gen_embed = get_or(m, "model", "gen_embed", cfg.model.gen_embed);
    const std::pair<const char*, int> widths[] = {{"model.hidden", cfg.model.hidden},
                                                  {"model.latent_dim", cfg.model.latent_dim},
                                                  {"model.gen_hidden", cfg.model.gen_hidden},
                                                  {"model.gen_embed", cfg.model.gen_embed}};
    for (const auto& [name, v] : widths)
      if (v < 1) throw ConfigError(name, "must be >= 1");
  }

  if (j.contains("sgd")) {
    const json& s = j.at("sgd");
    reject_unknown(s, "sgd", {"learning_rate", "batch_size"});
    cfg.sgd.learning_rate = get_or(s, "sgd", "learning_rate", cfg.sgd.learning_rate);
    cfg.sgd.batch_size = get_or(s, "sgd", "batch_size", cfg.sgd.batch_size);
    if (!(cfg.sgd.learning_rate > 0)) throw ConfigError("sgd.learning_rate", "must be > 0");
    if (cfg.sgd.batch_size < 1) throw ConfigError("sgd.batch_size", "must be >= 1");
  }

  if (j.contains("bound_eval")) {
    const json& b = j.at("bound_eval");
    reject_unknown(b, "bound_eval",
                   {"enabled", "hypothesis", "steps", "lr", "hidden", "batch_size", "delta",
                    "lambda_budget", "m_mode"});
    cfg.bound_eval.enabled = get_or(b, "bound_eval", "enabled", cfg.bound_eval.enabled);
    cfg.bound_eval.hypothesis =
        get_or<std::string>(b, "bound_eval", "hypothesis", cfg.bound_eval.hypothesis);
    cfg.bound_eval.steps = get_or(b, "bound_eval", "steps", cfg.bound_eval.steps);
    cfg.bound_eval.lr = get_or(b, "bound_eval", "lr", cfg.bound_eval.lr);
    cfg.bound_eval.hidden = get_or(b, "bound_eval", "hidden", cfg.bound_eval.hidden);
    cfg.bound_eval.batch_size = get_or(b, "bound_eval", "batch_size", cfg.bound_eval.batch_size);
    cfg.bound_eval.delta = get_or(b, "bound_eval", "delta", cfg.bound_eval.delta);
    cfg.bound_eval.lambda_budget =
        get_or(b, "bound_eval", "lambda_budget", cfg.bound_eval.lambda_budget);
    cfg.bound_eval.m_mode = get_or<std::string>(b, "bound_eval", "m_mode", cfg.bound_eval.m_mode);
    if (!(cfg.bound_eval.delta > 0 && cfg.bound_eval.delta < 1))
      throw ConfigError("bound_eval.delta", "must be in (0,1)");
    try {
      divergence::hypothesis_kind_from_string(cfg.bound_eval.hypothesis);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("bound_eval.hypothesis", e.what());
    }
    if (cfg.bound_eval.m_mode != "min" && cfg.bound_eval.m_mode != "per_pair")
      throw ConfigError("bound_eval.m_mode", "expected \"min\" or \"per_pair\"");
  }

  // cross-field consistency
  if (cfg.dataset.type == DatasetConfig::Type::toy && cfg.federation.K != 3)
    throw ConfigError("federation.K", "must be 3 for the toy dataset (it has three clients)");

  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("<file>", "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  json d;
  switch (cfg.dataset.type) {
    case DatasetConfig::Type::toy:
      d["type"] = "toy";
      d["n_per_class"] = cfg.dataset.n_per_class;
      break;
    case DatasetConfig::Type::idx:
      d["type"] = "idx";
      d["images"] = cfg.dataset.images;
      d["labels"] = cfg.dataset.labels;
      d["test_images"] = cfg.dataset.test_images;
      d["test_labels"] = cfg.dataset.test_labels;
      break;
    case DatasetConfig::Type::synthetic:
      d["type"] = "synthetic";
      d["n_classes"] = cfg.dataset.n_classes;
      d["input_dim"] = cfg.dataset.input_dim;
      d["n_train"] = cfg.dataset.n_train;
      d["n_test"] = cfg.dataset.n_test;
      d["center_scale"] = cfg.dataset.center_scale;
      break;
  }
  j["dataset"] = d;
  j["partition"] = {{"alpha", cfg.partition.alpha},
                    {"train_fraction", cfg.partition.train_fraction}};
  j["federation"] = {{"K", cfg.federation.K},
                     {"active_fraction", cfg.federation.active_fraction},
                     {"rounds", cfg.federation.rounds},
                     {"local_steps", cfg.federation.local_steps},
                     {"method", fed::to_string(cfg.federation.method)},
                     {"m_k", cfg.federation.m_k},
                     {"w_gen", cfg.federation.w_gen},
                     {"gen_steps", cfg.federation.gen_steps},
                     {"gen_lr", cfg.federation.gen_lr},
                     {"gen_batch", cfg.federation.gen_batch},
                     {"lambda_grl", cfg.federation.lambda_grl},
                     {"lambda_decay_rounds", cfg.federation.lambda_decay_rounds},
                     {"beta_kl", cfg.federation.beta_kl},
                     {"weighted_aggregation", cfg.federation.weighted_aggregation},
                     {"persist_generators", cfg.federation.persist_generators}};
  j["model"] = {{"hidden", cfg.model.hidden},
                {"latent_dim", cfg.model.latent_dim},
                {"gen_hidden", cfg.model.gen_hidden},
                {"gen_embed", cfg.model.gen_embed}};
  j["sgd"] = {{"learning_rate", cfg.sgd.learning_rate}, {"batch_size", cfg.sgd.batch_size}};
  j["bound_eval"] = {{"enabled", cfg.bound_eval.enabled},
                     {"hypothesis", cfg.bound_eval.hypothesis},
                     {"steps", cfg.bound_eval.steps},
                     {"lr", cfg.bound_eval.lr},
                     {"hidden", cfg.bound_eval.hidden},
                     {"batch_size", cfg.bound_eval.batch_size},
                     {"delta", cfg.bound_eval.delta},
                     {"lambda_budget", cfg.bound_eval.lambda_budget},
                     {"m_mode", cfg.bound_eval.m_mode}};
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : serialize_config(cfg)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

}  // namespace fhs::harness
