#include "fhs/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <stdexcept>

#include "fhs/kernels.hpp"
#include "fhs/rng.hpp"

namespace fhs::fed {

using models::GeneratorParams;
using models::ModelParams;

Method method_from_string(const std::string& s) {
  if (s == "fedavg") return Method::fedavg;
  if (s == "fedensemble") return Method::fedensemble;
  if (s == "fedgen") return Method::fedgen;
  if (s == "fedgenp") return Method::fedgenp;
  throw std::invalid_argument("unknown method '" + s +
                              "' (expected fedavg|fedensemble|fedgen|fedgenp)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::fedavg: return "fedavg";
    case Method::fedensemble: return "fedensemble";
    case Method::fedgen: return "fedgen";
    case Method::fedgenp: return "fedgenp";
  }
  return "?";
}

void validate(const FederationConfig& cfg) {
  if (cfg.K < 1) throw std::invalid_argument("federation.K must be >= 1");
  if (!(cfg.active_fraction > 0.0) || cfg.active_fraction > 1.0)
    throw std::invalid_argument("federation.active_fraction must be in (0,1]");
  if (cfg.rounds < 1) throw std::invalid_argument("federation.rounds must be >= 1");
  if (cfg.local_steps < 0) throw std::invalid_argument("federation.local_steps must be >= 0");
  if (cfg.m_k < 0) throw std::invalid_argument("federation.m_k must be >= 0");
  if (cfg.w_gen < 0.0) throw std::invalid_argument("federation.w_gen must be >= 0");
  if (cfg.gen_steps < 0) throw std::invalid_argument("federation.gen_steps must be >= 0");
  if (!(cfg.gen_lr > 0.0)) throw std::invalid_argument("federation.gen_lr must be > 0");
  if (cfg.gen_batch < 1) throw std::invalid_argument("federation.gen_batch must be >= 1");
  if (cfg.lambda_grl < 0.0) throw std::invalid_argument("federation.lambda_grl must be >= 0");
  if (cfg.beta_kl < 0.0) throw std::invalid_argument("federation.beta_kl must be >= 0");
}

namespace {

// walks the tensors of a model in checkpoint order
template <typename Fn>
void for_each_tensor(ModelParams& m, Fn fn) {
  for (auto& [n, t] : m.repr.items) fn(t);
  for (auto& [n, t] : m.pred.items) fn(t);
}
template <typename Fn>
void for_each_tensor(const ModelParams& m, Fn fn) {
  for (const auto& [n, t] : m.repr.items) fn(t);
  for (const auto& [n, t] : m.pred.items) fn(t);
}

}  // namespace

ModelParams aggregate(const std::vector<ModelParams>& clients) {
  if (clients.empty()) throw std::invalid_argument("aggregate: empty client list");
  for (const auto& c : clients)
    if (!clients.front().same_architecture(c))
      throw std::invalid_argument("aggregate: architecture mismatch");

  const std::size_t K = clients.size();
  ModelParams out = clients.front();
  std::vector<const Tensor*> srcs(K);
  std::vector<double> vals(K);

  std::size_t tensor_idx = 0;
  auto collect = [&](const ModelParams& m) {
    std::vector<const Tensor*> ts;
    for_each_tensor(m, [&](const Tensor& t) { ts.push_back(&t); });
    return ts;
  };
  std::vector<std::vector<const Tensor*>> all(K);
  for (std::size_t k = 0; k < K; ++k) all[k] = collect(clients[k]);

  for_each_tensor(out, [&](Tensor& dst) {
    for (std::size_t k = 0; k < K; ++k) srcs[k] = all[k][tensor_idx];
    for (std::size_t j = 0; j < dst.data.size(); ++j) {
      for (std::size_t k = 0; k < K; ++k) vals[k] = srcs[k]->data[j];
      std::sort(vals.begin(), vals.end());
      if (vals.front() == vals.back()) {
        dst.data[j] = vals.front();
      } else {
        double s = 0.0;
        for (double v : vals) s += v;
        dst.data[j] = s / static_cast<double>(K);
      }
    }
    dst.grad.clear();
    ++tensor_idx;
  });
  return out;
}

ModelParams aggregate_weighted(const std::vector<ModelParams>& clients,
                               const std::vector<double>& weights) {
  if (clients.empty()) throw std::invalid_argument("aggregate: empty client list");
  if (weights.size() != clients.size())
    throw std::invalid_argument("aggregate_weighted: weight count mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("aggregate_weighted: negative weight");
    wsum += w;
  }
  if (!(wsum > 0.0)) throw std::invalid_argument("aggregate_weighted: zero total weight");
  for (const auto& c : clients)
    if (!clients.front().same_architecture(c))
      throw std::invalid_argument("aggregate: architecture mismatch");

  ModelParams out = clients.front();
  std::size_t tensor_idx = 0;
  std::vector<std::vector<const Tensor*>> all(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k) {
    for_each_tensor(clients[k], [&](const Tensor& t) { all[k].push_back(&t); });
  }
  for_each_tensor(out, [&](Tensor& dst) {
    for (std::size_t j = 0; j < dst.data.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < clients.size(); ++k)
        s += weights[k] * all[k][tensor_idx]->data[j];
      dst.data[j] = s / wsum;
    }
    dst.grad.clear();
    ++tensor_idx;
  });
  return out;
}

namespace {

Tensor rows_of(const data::LabeledDataset& d, const std::vector<int>& idx, int from, int to) {
  Tensor x({to - from, d.dim()});
  for (int r = from; r < to; ++r)
    for (int j = 0; j < d.dim(); ++j)
      x.at(r - from, j) = d.features.at(idx[static_cast<std::size_t>(r)], j);
  return x;
}

Tensor labels_of(const data::LabeledDataset& d, const std::vector<int>& idx, int from, int to) {
  Tensor y({to - from});
  for (int r = from; r < to; ++r)
    y.data[static_cast<std::size_t>(r - from)] =
        static_cast<double>(d.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])]);
  return y;
}

}  // namespace

ModelParams local_train_with_generator(const data::ClientDataset& client,
                                       const ModelParams& init,
                                       const GeneratorParams* gen, int T, const SgdConfig& sgd,
                                       int m_k, double w_gen, std::uint64_t seed) {
  const data::LabeledDataset& d = client.training_view();
  if (d.n() == 0)
    throw std::invalid_argument("local_train: client " + std::to_string(client.client_id) +
                                " has an empty dataset");
  const bool use_gen = gen != nullptr && m_k > 0 && w_gen > 0.0;

  ModelParams m = init;
  m.zero_grads();
  models::ClassifierLoss loss(m, use_gen ? w_gen : 0.0);

  std::vector<int> order(static_cast<std::size_t>(d.n()));
  for (int i = 0; i < d.n(); ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < T; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    Tensor z_gen, y_gen;
    if (use_gen) {
      // one draw of m_k labeled latents per epoch, from its own stream so
      // the batch schedule is untouched when the generator is absent
      Rng gen_rng(derive_seed(seed, "gendraw", static_cast<std::uint64_t>(epoch)));
      models::GeneratorBatch gb = models::sample_generator_batch(
          m_k, gen->arch.n_classes, gen->arch.latent_dim, gen_rng);
      std::vector<int> ys(static_cast<std::size_t>(m_k));
      for (int i = 0; i < m_k; ++i)
        ys[static_cast<std::size_t>(i)] = static_cast<int>(gb.labels.data[static_cast<std::size_t>(i)]);
      z_gen = models::generator_sample_batch(*gen, ys, gb.noise);
      y_gen = gb.labels;
    }

    for (int from = 0; from < d.n(); from += sgd.batch_size) {
      const int to = std::min(d.n(), from + sgd.batch_size);
      Tensor x = rows_of(d, order, from, to);
      Tensor y = labels_of(d, order, from, to);
      if (use_gen)
        loss.step(x, y, z_gen, y_gen, true);
      else
        loss.step(x, y, true);
      sgd_step(m.repr, sgd.learning_rate);
      sgd_step(m.pred, sgd.learning_rate);
    }
  }
  return m;
}

ModelParams local_train(const data::ClientDataset& client, const ModelParams& init, int T,
                        const SgdConfig& sgd, std::uint64_t seed) {
  return local_train_with_generator(client, init, nullptr, T, sgd, 0, 0.0, seed);
}

std::vector<GeneratorParams> train_generators_server(
    const std::vector<const ParamSet*>& predictors, const models::GeneratorSpec& spec, int steps,
    double lr, int batch, const models::GrlSpec& grl, double beta_kl, std::uint64_t seed,
    std::vector<GeneratorParams>* warm_start) {
  const int K = static_cast<int>(predictors.size());
  if (K == 0) throw std::invalid_argument("train_generators_server: no predictors");
  if (warm_start && static_cast<int>(warm_start->size()) != K)
    throw std::invalid_argument("train_generators_server: warm start size mismatch");

  std::vector<GeneratorParams> out(static_cast<std::size_t>(K));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(K));
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::max_threads())
  for (int k = 0; k < K; ++k) {
    try {
      GeneratorParams g =
          warm_start ? (*warm_start)[static_cast<std::size_t>(k)]
                     : GeneratorParams::init(
                           spec, derive_seed(seed, "geninit", static_cast<std::uint64_t>(k)));
      models::GeneratorObjective obj(g, predictors, k, grl, beta_kl);
      Rng stream(derive_seed(seed, "genbatch", static_cast<std::uint64_t>(k)));
      for (int s = 0; s < steps; ++s) {
        auto b = models::sample_generator_batch(batch, spec.n_classes, spec.latent_dim, stream);
        obj.step(b);
        sgd_step(g.ps, lr);
      }
      out[static_cast<std::size_t>(k)] = std::move(g);
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

GeneratorParams train_shared_generator(const std::vector<const ParamSet*>& predictors,
                                       const models::GeneratorSpec& spec, int steps, double lr,
                                       int batch, double beta_kl, std::uint64_t seed) {
  if (predictors.empty()) throw std::invalid_argument("train_shared_generator: no predictors");
  GeneratorParams g = GeneratorParams::init(spec, derive_seed(seed, "geninit_shared"));
  models::GeneratorObjective obj(g, predictors, -1, models::GrlSpec{0.0}, beta_kl);
  Rng stream(derive_seed(seed, "genbatch_shared"));
  for (int s = 0; s < steps; ++s) {
    auto b = models::sample_generator_batch(batch, spec.n_classes, spec.latent_dim, stream);
    obj.step(b);
    sgd_step(g.ps, lr);
  }
  return g;
}

models::EvalResult fedensemble_evaluate_full(const std::vector<ModelParams>& clients,
                                             const data::LabeledDataset& test) {
  if (clients.empty()) throw std::invalid_argument("fedensemble: empty model list");
  for (const auto& c : clients)
    if (!clients.front().same_architecture(c))
      throw std::invalid_argument("fedensemble: architecture mismatch");
  Tensor avg = models::classifier_forward(clients.front(), test.features);
  for (std::size_t k = 1; k < clients.size(); ++k) {
    Tensor p = models::classifier_forward(clients[k], test.features);
    kernels::add(avg.data.data(), p.data.data(), avg.data.data(), avg.size());
  }
  const double inv = 1.0 / static_cast<double>(clients.size());
  for (auto& v : avg.data) v *= inv;
  return models::evaluate_probs(avg, test.labels);
}

double fedensemble_evaluate(const std::vector<ModelParams>& clients,
                            const data::LabeledDataset& test) {
  return fedensemble_evaluate_full(clients, test).accuracy;
}

JensenCheck jensen_ensemble_check(const std::vector<ModelParams>& clients,
                                  const data::LabeledDataset& eval) {
  JensenCheck out;
  out.ensemble_risk = fedensemble_evaluate_full(clients, eval).tv_risk;
  for (const auto& c : clients)
    out.mean_member_risk += models::evaluate(c, eval.features, eval.labels).tv_risk;
  out.mean_member_risk /= static_cast<double>(clients.size());
  return out;
}

void validate_setup(const FederationConfig& cfg, const ExperimentSetup& setup) {
  validate(cfg);
  validate(setup.sgd);
  if (static_cast<int>(setup.clients.size()) != cfg.K)
    throw std::invalid_argument("setup: client count " + std::to_string(setup.clients.size()) +
                                " != federation.K " + std::to_string(cfg.K));
  if (setup.arch.latent_dim != setup.gen_arch.latent_dim)
    throw std::invalid_argument("setup: model and generator latent dims disagree");
  if (setup.arch.n_classes != setup.gen_arch.n_classes)
    throw std::invalid_argument("setup: model and generator class counts disagree");
  for (const auto& c : setup.clients) {
    if (c.data.dim() != setup.arch.input_dim)
      throw std::invalid_argument("setup: client features do not match arch.input_dim");
    if (c.data.n_classes != setup.arch.n_classes)
      throw std::invalid_argument("setup: client class count does not match arch.n_classes");
  }
  if (setup.test.dim() != setup.arch.input_dim || setup.test.n_classes != setup.arch.n_classes)
    throw std::invalid_argument("setup: test set does not match the architecture");
}

namespace {

// per-round adversarial weight, with the optional linear decay to zero
double lambda_at_round(const FederationConfig& cfg, int round) {
  if (cfg.lambda_decay_rounds <= 0) return cfg.lambda_grl;
  double f = 1.0 - static_cast<double>(round - 1) / static_cast<double>(cfg.lambda_decay_rounds);
  return cfg.lambda_grl * std::max(0.0, f);
}

}  // namespace

FederationState initialize(const FederationConfig& cfg, const ExperimentSetup& setup) {
  validate_setup(cfg, setup);
  FederationState st;
  st.global = ModelParams::init(setup.arch, derive_seed(cfg.seed, "init"));
  st.locals.resize(static_cast<std::size_t>(cfg.K), st.global);

  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.K));
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::max_threads())
  for (int k = 0; k < cfg.K; ++k) {
    try {
      st.locals[static_cast<std::size_t>(k)] =
          local_train(setup.clients[static_cast<std::size_t>(k)], st.global, cfg.local_steps,
                      setup.sgd, derive_seed(cfg.seed, "local", 0, static_cast<std::uint64_t>(k)));
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return st;
}

RoundMetrics run_round(FederationState& state, const FederationConfig& cfg,
                       const ExperimentSetup& setup) {
  const auto t0 = std::chrono::steady_clock::now();
  const int round = state.next_round;

  // active clients, sampled without replacement
  const int n_active = static_cast<int>(std::ceil(cfg.active_fraction * cfg.K));
  Rng active_rng(derive_seed(cfg.seed, "active", static_cast<std::uint64_t>(round)));
  std::vector<int> active = active_rng.sample_without_replacement(cfg.K, n_active);
  std::sort(active.begin(), active.end());

  // server: aggregate previous locals into the global model
  state.global = cfg.weighted_aggregation
                     ? [&] {
                         std::vector<double> w(static_cast<std::size_t>(cfg.K));
                         for (int k = 0; k < cfg.K; ++k)
                           w[static_cast<std::size_t>(k)] =
                               static_cast<double>(setup.clients[static_cast<std::size_t>(k)].data.n());
                         return aggregate_weighted(state.locals, w);
                       }()
                     : aggregate(state.locals);

  // server: generators, where the method uses them
  const bool gen_active = cfg.m_k > 0 && cfg.w_gen > 0.0 && cfg.gen_steps > 0;
  std::vector<GeneratorParams> generators;
  GeneratorParams shared_gen;
  if (cfg.method == Method::fedgenp && gen_active) {
    std::vector<const ParamSet*> predictors;
    predictors.reserve(state.locals.size());
    for (const auto& m : state.locals) predictors.push_back(&m.pred);
    models::GrlSpec grl{lambda_at_round(cfg, round)};
    auto* warm = cfg.persist_generators && !state.generators.empty() ? &state.generators : nullptr;
    generators = train_generators_server(
        predictors, setup.gen_arch, cfg.gen_steps, cfg.gen_lr, cfg.gen_batch, grl, cfg.beta_kl,
        derive_seed(cfg.seed, "genround", static_cast<std::uint64_t>(round)), warm);
    if (cfg.persist_generators) state.generators = generators;
  } else if (cfg.method == Method::fedgen && gen_active) {
    std::vector<const ParamSet*> predictors;
    predictors.reserve(state.locals.size());
    for (const auto& m : state.locals) predictors.push_back(&m.pred);
    shared_gen = train_shared_generator(
        predictors, setup.gen_arch, cfg.gen_steps, cfg.gen_lr, cfg.gen_batch, cfg.beta_kl,
        derive_seed(cfg.seed, "genround", static_cast<std::uint64_t>(round)));
  }

  // clients: active ones retrain from the broadcast global model
  std::vector<std::exception_ptr> errors(active.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::max_threads())
  for (int a = 0; a < static_cast<int>(active.size()); ++a) {
    const int k = active[static_cast<std::size_t>(a)];
    try {
      const std::uint64_t client_seed =
          derive_seed(cfg.seed, "local", static_cast<std::uint64_t>(round),
                      static_cast<std::uint64_t>(k));
      const data::ClientDataset& client = setup.clients[static_cast<std::size_t>(k)];
      ModelParams result;
      if (cfg.method == Method::fedgenp && gen_active) {
        result = local_train_with_generator(client, state.global,
                                            &generators[static_cast<std::size_t>(k)],
                                            cfg.local_steps, setup.sgd, cfg.m_k, cfg.w_gen,
                                            client_seed);
      } else if (cfg.method == Method::fedgen && gen_active) {
        result = local_train_with_generator(client, state.global, &shared_gen, cfg.local_steps,
                                            setup.sgd, cfg.m_k, cfg.w_gen, client_seed);
      } else {
        result = local_train(client, state.global, cfg.local_steps, setup.sgd, client_seed);
      }
      state.locals[static_cast<std::size_t>(k)] = std::move(result);
    } catch (...) {
      errors[static_cast<std::size_t>(a)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  // metrics on the global test set; fedensemble reads the local models,
  // the parameter-averaging methods read the aggregate
  RoundMetrics mt;
  mt.round = round;
  models::EvalResult global_eval =
      cfg.method == Method::fedensemble
          ? fedensemble_evaluate_full(state.locals, setup.test)
          : models::evaluate(state.global, setup.test.features, setup.test.labels);
  mt.global_accuracy = global_eval.accuracy;
  mt.global_loss = global_eval.mean_ce;
  mt.per_client_accuracy.reserve(setup.clients.size());
  for (const auto& c : setup.clients) {
    models::EvalResult e =
        cfg.method == Method::fedensemble
            ? fedensemble_evaluate_full(state.locals, c.data)
            : models::evaluate(state.global, c.data.features, c.data.labels);
    mt.per_client_accuracy.push_back(e.accuracy);
  }
  mt.wall_ms = static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                     std::chrono::steady_clock::now() - t0)
                                     .count());
  state.next_round = round + 1;
  return mt;
}

ExperimentResult run_experiment(const FederationConfig& cfg, const ExperimentSetup& setup) {
  FederationState st = initialize(cfg, setup);
  ExperimentResult out;
  out.rounds.reserve(static_cast<std::size_t>(cfg.rounds));
  for (int r = 0; r < cfg.rounds; ++r) out.rounds.push_back(run_round(st, cfg, setup));
  out.global = std::move(st.global);
  out.locals = std::move(st.locals);
  return out;
}

}  // namespace fhs::fed
