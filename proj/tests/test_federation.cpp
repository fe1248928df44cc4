#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "fhs/federation.hpp"
#include "fhs/rng.hpp"

using namespace fhs;
using namespace fhs::fed;
using models::GeneratorParams;
using models::GeneratorSpec;
using models::MlpSpec;
using models::ModelParams;

TEST_SUITE_BEGIN("federation");

namespace {

bool models_bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!a.same_architecture(b)) return false;
  for (std::size_t i = 0; i < a.repr.size(); ++i)
    if (a.repr.items[i].second.data != b.repr.items[i].second.data) return false;
  for (std::size_t i = 0; i < a.pred.size(); ++i)
    if (a.pred.items[i].second.data != b.pred.items[i].second.data) return false;
  return true;
}

ModelParams scalar_model(double v) {
  // single-weight-per-tensor model for aggregation arithmetic
  MlpSpec spec{1, 1, 1, 2};
  ModelParams m = ModelParams::zeros(spec);
  for (auto& [n, t] : m.repr.items)
    for (auto& x : t.data) x = v;
  for (auto& [n, t] : m.pred.items)
    for (auto& x : t.data) x = v;
  return m;
}

double first_weight(const ModelParams& m) { return m.repr.items[0].second.data[0]; }

// toy federation setup small enough for unit tests
ExperimentSetup toy_setup(int n_per_class, std::uint64_t seed, int latent = 4) {
  auto toy = data::make_toy_concept_shift(n_per_class, seed);
  ExperimentSetup s;
  s.clients = std::move(toy.clients);
  s.test = std::move(toy.test);
  s.arch = MlpSpec{2, 16, latent, 2};
  s.gen_arch = GeneratorSpec{2, latent, 8, 16};
  s.sgd = SgdConfig{0.01, 32};
  return s;
}

}  // namespace

TEST_CASE("aggregate of identical param sets is bitwise equal to them") {
  ModelParams m = ModelParams::init(MlpSpec{3, 4, 2, 2}, 5);
  auto agg = aggregate({m, m, m});
  CHECK(models_bitwise_equal(agg, m));
}

TEST_CASE("aggregate takes the arithmetic mean") {
  auto agg = aggregate({scalar_model(0.0), scalar_model(2.0)});
  CHECK(first_weight(agg) == 1.0);
  auto agg3 = aggregate({scalar_model(0.0), scalar_model(2.0), scalar_model(4.0)});
  CHECK(first_weight(agg3) == 2.0);
}

TEST_CASE("aggregate is exactly permutation-invariant") {
  Rng r(8);
  std::vector<ModelParams> ms;
  for (int i = 0; i < 5; ++i) ms.push_back(ModelParams::init(MlpSpec{3, 4, 2, 2}, r.u64()));
  auto a = aggregate(ms);
  std::swap(ms[0], ms[3]);
  std::swap(ms[1], ms[4]);
  auto b = aggregate(ms);
  CHECK(models_bitwise_equal(a, b));
}

TEST_CASE("aggregate is linear") {
  // integer-valued params make the float sums exact, so linearity holds
  // bitwise, not just approximately
  auto a1 = scalar_model(1.0), a2 = scalar_model(3.0);
  auto b1 = scalar_model(2.0), b2 = scalar_model(6.0);
  auto sum_in = aggregate({scalar_model(3.0), scalar_model(9.0)});  // a_k + b_k
  auto sum_out_a = aggregate({a1, a2});
  auto sum_out_b = aggregate({b1, b2});
  CHECK(first_weight(sum_in) == first_weight(sum_out_a) + first_weight(sum_out_b));

  // scaling by a power of two is exact as well
  auto scaled = aggregate({scalar_model(2.0), scalar_model(6.0)});
  CHECK(first_weight(scaled) == 2.0 * first_weight(sum_out_a));
}

TEST_CASE("aggregate error paths") {
  CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
  ModelParams a = ModelParams::init(MlpSpec{3, 4, 2, 2}, 1);
  ModelParams b = ModelParams::init(MlpSpec{3, 8, 2, 2}, 1);
  CHECK_THROWS_AS(aggregate({a, b}), std::invalid_argument);
}

TEST_CASE("local_train with zero epochs returns the init bitwise") {
  auto setup = toy_setup(10, 3);
  ModelParams init = ModelParams::init(setup.arch, 9);
  auto out = local_train(setup.clients[0], init, 0, setup.sgd, 17);
  CHECK(models_bitwise_equal(out, init));
}

TEST_CASE("local_train reduces the loss on two separable points") {
  data::ClientDataset client;
  client.client_id = 0;
  client.data.n_classes = 2;
  client.data.features = Tensor::matrix(2, 2, {2.0, 2.0, -2.0, -2.0});
  client.data.labels = {0, 1};
  client.class_histogram = {1, 1};

  MlpSpec arch{2, 8, 4, 2};
  ModelParams init = ModelParams::init(arch, 4);
  auto eval_loss = [&](const ModelParams& m) {
    return models::evaluate(m, client.data.features, client.data.labels).mean_ce;
  };
  double before = eval_loss(init);
  auto trained = local_train(client, init, 100, SgdConfig{0.01, 32}, 5);
  CHECK(eval_loss(trained) < before);
}

TEST_CASE("local_train is deterministic under a fixed seed") {
  auto setup = toy_setup(20, 6);
  ModelParams init = ModelParams::init(setup.arch, 2);
  auto a = local_train(setup.clients[1], init, 3, setup.sgd, 123);
  auto b = local_train(setup.clients[1], init, 3, setup.sgd, 123);
  CHECK(models_bitwise_equal(a, b));
  auto c = local_train(setup.clients[1], init, 3, setup.sgd, 124);
  CHECK(!models_bitwise_equal(a, c));
}

TEST_CASE("local_train rejects an empty dataset") {
  data::ClientDataset client;
  client.data.n_classes = 2;
  client.data.features = Tensor({0, 2});
  ModelParams init = ModelParams::init(MlpSpec{2, 4, 2, 2}, 1);
  CHECK_THROWS_AS(local_train(client, init, 1, SgdConfig{}, 0), std::invalid_argument);
}

TEST_CASE("generator with m_k=0 or w_gen=0 reduces to plain local_train bitwise") {
  auto setup = toy_setup(20, 1);
  ModelParams init = ModelParams::init(setup.arch, 7);
  GeneratorParams gen = GeneratorParams::init(setup.gen_arch, 3);

  auto plain = local_train(setup.clients[0], init, 4, setup.sgd, 55);
  auto no_samples =
      local_train_with_generator(setup.clients[0], init, &gen, 4, setup.sgd, 0, 1.0, 55);
  CHECK(models_bitwise_equal(plain, no_samples));
  auto no_weight =
      local_train_with_generator(setup.clients[0], init, &gen, 4, setup.sgd, 32, 0.0, 55);
  CHECK(models_bitwise_equal(plain, no_weight));
  auto no_gen =
      local_train_with_generator(setup.clients[0], init, nullptr, 4, setup.sgd, 32, 1.0, 55);
  CHECK(models_bitwise_equal(plain, no_gen));
}

TEST_CASE("a generator aimed at other clients' regions lifts cross-client accuracy") {
  // paired seeded runs: client 0 trained alone vs trained with a hand-built
  // generator whose per-class means sit where clients 1 and 2 map their data
  auto setup = toy_setup(100, 4, /*latent=*/4);
  ModelParams init = ModelParams::init(setup.arch, 11);

  // per-class latent means of the other clients' data under the initial
  // (broadcast) representation
  const int L = setup.arch.latent_dim;
  std::vector<std::vector<double>> target(2, std::vector<double>(static_cast<std::size_t>(L), 0.0));
  std::vector<int> counts(2, 0);
  for (int other : {1, 2}) {
    Tensor latents;
    models::classifier_forward(init, setup.clients[static_cast<std::size_t>(other)].data.features,
                               &latents);
    const auto& labels = setup.clients[static_cast<std::size_t>(other)].data.labels;
    for (int i = 0; i < latents.rows(); ++i) {
      int y = labels[static_cast<std::size_t>(i)];
      for (int j = 0; j < L; ++j) target[static_cast<std::size_t>(y)][static_cast<std::size_t>(j)] += latents.at(i, j);
      ++counts[static_cast<std::size_t>(y)];
    }
  }
  for (int y = 0; y < 2; ++y)
    for (int j = 0; j < L; ++j)
      target[static_cast<std::size_t>(y)][static_cast<std::size_t>(j)] /= counts[static_cast<std::size_t>(y)];

  // generator wired by hand: one-hot embeddings pass through an identity
  // trunk, so mean(y) = row y of gen.Wm and the variance is small
  GeneratorSpec gspec{2, L, 2, 2};
  GeneratorParams gen = GeneratorParams::init(gspec, 0);
  gen.ps.find("gen.embed")->data = {1, 0, 0, 1};
  gen.ps.find("gen.W0")->data = {1, 0, 0, 1};
  gen.ps.find("gen.b0")->data.assign(2, 0.0);
  for (int y = 0; y < 2; ++y)
    for (int j = 0; j < L; ++j) gen.ps.find("gen.Wm")->at(y, j) = target[static_cast<std::size_t>(y)][static_cast<std::size_t>(j)];
  gen.ps.find("gen.bm")->data.assign(static_cast<std::size_t>(L), 0.0);
  gen.ps.find("gen.Wv")->data.assign(gen.ps.find("gen.Wv")->data.size(), 0.0);
  gen.ps.find("gen.bv")->data.assign(static_cast<std::size_t>(L), -4.0);

  auto plain = local_train(setup.clients[0], init, 10, setup.sgd, 77);
  auto helped =
      local_train_with_generator(setup.clients[0], init, &gen, 10, setup.sgd, 32, 1.0, 77);

  double acc_plain = 0, acc_helped = 0;
  for (int other : {1, 2}) {
    const auto& d = setup.clients[static_cast<std::size_t>(other)].data;
    acc_plain += models::evaluate(plain, d.features, d.labels).accuracy;
    acc_helped += models::evaluate(helped, d.features, d.labels).accuracy;
  }
  CHECK(acc_helped > acc_plain);
}

TEST_CASE("train_generators_server returns exactly K generators") {
  std::vector<ModelParams> locals;
  for (int k = 0; k < 4; ++k) locals.push_back(ModelParams::init(MlpSpec{2, 8, 4, 2}, 10 + k));
  std::vector<const ParamSet*> preds;
  for (auto& m : locals) preds.push_back(&m.pred);
  auto gens = train_generators_server(preds, GeneratorSpec{2, 4, 8, 16}, 5, 0.01, 16,
                                      models::GrlSpec{1.0}, 0.05, 99);
  CHECK(gens.size() == 4);
}

TEST_CASE("generator samples land where other predictors agree") {
  // three clients trained on the rotating toy blobs disagree; samples from
  // G_0 must score higher under predictors 1 and 2 than under predictor 0
  auto setup = toy_setup(80, 12);
  ModelParams init = ModelParams::init(setup.arch, 1);
  std::vector<ModelParams> locals;
  for (int k = 0; k < 3; ++k)
    locals.push_back(local_train(setup.clients[static_cast<std::size_t>(k)], init, 10, setup.sgd,
                                 derive_seed(3, "warm", 0, static_cast<std::uint64_t>(k))));
  std::vector<const ParamSet*> preds;
  for (auto& m : locals) preds.push_back(&m.pred);

  auto gens = train_generators_server(preds, setup.gen_arch, 200, 0.01, 32,
                                      models::GrlSpec{1.0}, 0.05, 5);

  // mean log p(y|z) of G_0's samples under each predictor
  Rng r(17);
  auto gb = models::sample_generator_batch(256, 2, setup.arch.latent_dim, r);
  std::vector<int> ys(256);
  for (int i = 0; i < 256; ++i) ys[static_cast<std::size_t>(i)] = static_cast<int>(gb.labels.data[static_cast<std::size_t>(i)]);
  Tensor z = models::generator_sample_batch(gens[0], ys, gb.noise);

  auto mean_loglik = [&](const ParamSet& pred) {
    const Tensor& W = *pred.find("pred.W");
    const Tensor& b = *pred.find("pred.b");
    double total = 0;
    for (int i = 0; i < z.rows(); ++i) {
      std::vector<double> logits(2, 0.0);
      for (int c = 0; c < 2; ++c) {
        double s = b.data[static_cast<std::size_t>(c)];
        for (int j = 0; j < z.cols(); ++j) s += z.at(i, j) * W.at(j, c);
        logits[static_cast<std::size_t>(c)] = s;
      }
      double mx = std::max(logits[0], logits[1]);
      double lse = mx + std::log(std::exp(logits[0] - mx) + std::exp(logits[1] - mx));
      total += logits[static_cast<std::size_t>(ys[static_cast<std::size_t>(i)])] - lse;
    }
    return total / z.rows();
  };
  double self_ll = mean_loglik(locals[0].pred);
  double others_ll = 0.5 * (mean_loglik(locals[1].pred) + mean_loglik(locals[2].pred));
  CHECK(others_ll > self_ll);
}

TEST_CASE("fedavg with K=1 tracks the single client") {
  auto toy = data::make_toy_concept_shift(20, 2);
  ExperimentSetup s;
  s.clients.push_back(std::move(toy.clients[0]));
  s.test = std::move(toy.test);
  s.arch = MlpSpec{2, 8, 4, 2};
  s.gen_arch = GeneratorSpec{2, 4, 8, 16};
  s.sgd = SgdConfig{0.01, 32};
  FederationConfig cfg;
  cfg.K = 1;
  cfg.rounds = 2;
  cfg.local_steps = 2;
  cfg.method = Method::fedavg;
  cfg.seed = 3;

  FederationState st = initialize(cfg, s);
  ModelParams last_local = st.locals[0];
  run_round(st, cfg, s);
  CHECK(models_bitwise_equal(st.global, last_local));  // aggregate of one
  ModelParams second_local = st.locals[0];
  run_round(st, cfg, s);
  CHECK(models_bitwise_equal(st.global, second_local));
}

TEST_CASE("run_experiment emits exactly `rounds` metric rows") {
  auto setup = toy_setup(10, 5);
  FederationConfig cfg;
  cfg.K = 3;
  cfg.rounds = 4;
  cfg.local_steps = 1;
  cfg.method = Method::fedavg;
  auto result = run_experiment(cfg, setup);
  CHECK(result.rounds.size() == 4);
  for (int r = 0; r < 4; ++r) CHECK(result.rounds[static_cast<std::size_t>(r)].round == r + 1);
}

TEST_CASE("run_experiment is bitwise deterministic") {
  auto setup = toy_setup(15, 8);
  FederationConfig cfg;
  cfg.K = 3;
  cfg.rounds = 3;
  cfg.local_steps = 2;
  cfg.method = Method::fedgenp;
  cfg.gen_steps = 10;
  cfg.seed = 21;

  auto a = run_experiment(cfg, setup);
  auto b = run_experiment(cfg, setup);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    CHECK(a.rounds[i].global_accuracy == b.rounds[i].global_accuracy);
    CHECK(a.rounds[i].global_loss == b.rounds[i].global_loss);
    CHECK(a.rounds[i].per_client_accuracy == b.rounds[i].per_client_accuracy);
  }
  CHECK(models_bitwise_equal(a.global, b.global));
}

TEST_CASE("fedgenp with m_k=0 degenerates to fedavg bitwise") {
  auto setup = toy_setup(12, 9);
  FederationConfig avg;
  avg.K = 3;
  avg.rounds = 3;
  avg.local_steps = 2;
  avg.method = Method::fedavg;
  avg.seed = 5;
  FederationConfig genp = avg;
  genp.method = Method::fedgenp;
  genp.m_k = 0;

  auto a = run_experiment(avg, setup);
  auto b = run_experiment(genp, setup);
  for (std::size_t i = 0; i < a.rounds.size(); ++i) {
    CHECK(a.rounds[i].global_accuracy == b.rounds[i].global_accuracy);
    CHECK(a.rounds[i].global_loss == b.rounds[i].global_loss);
    CHECK(a.rounds[i].per_client_accuracy == b.rounds[i].per_client_accuracy);
  }
  CHECK(models_bitwise_equal(a.global, b.global));
}

TEST_CASE("clients are only read when active (access audit)") {
  auto toy = data::make_toy_concept_shift(10, 3);
  ExperimentSetup s;
  s.clients = std::move(toy.clients);
  s.test = std::move(toy.test);
  s.arch = MlpSpec{2, 8, 4, 2};
  s.gen_arch = GeneratorSpec{2, 4, 8, 16};
  s.sgd = SgdConfig{0.01, 32};
  FederationConfig cfg;
  cfg.K = 3;
  cfg.rounds = 1;
  cfg.local_steps = 1;
  cfg.active_fraction = 0.4;  // ceil(0.4 * 3) = 2 active clients
  cfg.method = Method::fedavg;

  FederationState st = initialize(cfg, s);
  std::vector<long> after_init;
  for (const auto& c : s.clients) after_init.push_back(c.access_count());
  for (long n : after_init) CHECK(n == 1);  // initialization touches everyone once

  run_round(st, cfg, s);
  long total_delta = 0;
  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    long delta = s.clients[k].access_count() - after_init[k];
    CHECK(delta >= 0);
    CHECK(delta <= 1);
    total_delta += delta;
  }
  CHECK(total_delta == 2);  // exactly the active clients
}

TEST_CASE("jensen inequality for the probability-averaged ensemble") {
  auto setup = toy_setup(30, 14);
  std::vector<ModelParams> locals;
  ModelParams init = ModelParams::init(setup.arch, 6);
  for (int k = 0; k < 3; ++k)
    locals.push_back(local_train(setup.clients[static_cast<std::size_t>(k)], init, 3, setup.sgd,
                                 static_cast<std::uint64_t>(k) + 40));
  // holds on every evaluation set, by convexity
  for (int k = 0; k < 3; ++k) {
    auto jc = jensen_ensemble_check(locals, setup.clients[static_cast<std::size_t>(k)].data);
    CHECK(jc.ensemble_risk <= jc.mean_member_risk + 1e-12);
  }
  auto jc = jensen_ensemble_check(locals, setup.test);
  CHECK(jc.ensemble_risk <= jc.mean_member_risk + 1e-12);
}

TEST_CASE("fedensemble of identical models equals the single model") {
  auto setup = toy_setup(25, 5);
  ModelParams m = ModelParams::init(setup.arch, 77);
  double single = models::evaluate(m, setup.test.features, setup.test.labels).accuracy;
  double ensembled = fedensemble_evaluate({m, m, m}, setup.test);
  CHECK(ensembled == single);
}

TEST_CASE("fedensemble averages probabilities and breaks ties low") {
  // two models with opposite hard predictions average to [0.5, 0.5]; the
  // tie goes to class 0
  MlpSpec arch{2, 2, 2, 2};
  auto passthrough = [&](std::vector<double> predW, std::vector<double> predB) {
    ModelParams m = ModelParams::zeros(arch);
    m.repr.find("repr.W0")->data = {1, 0, 0, 1};
    m.repr.find("repr.b0")->data = {5, 5};
    m.repr.find("repr.W1")->data = {1, 0, 0, 1};
    m.repr.find("repr.b1")->data = {-5, -5};
    m.pred.find("pred.W")->data = std::move(predW);
    m.pred.find("pred.b")->data = std::move(predB);
    return m;
  };
  // huge opposite logits: probabilities pin to [1,0] and [0,1]
  ModelParams a = passthrough({0, 0, 0, 0}, {50, -50});
  ModelParams b = passthrough({0, 0, 0, 0}, {-50, 50});

  data::LabeledDataset point;
  point.n_classes = 2;
  point.features = Tensor::matrix(1, 2, {0.3, -0.2});
  point.labels = {0};  // tie resolves to class 0 -> counted correct
  CHECK(fedensemble_evaluate({a, b}, point) == 1.0);
  point.labels = {1};
  CHECK(fedensemble_evaluate({a, b}, point) == 0.0);
}

TEST_CASE("fedensemble matches brute-force enumeration on eight points") {
  MlpSpec arch{2, 2, 2, 2};
  auto passthrough = [&](std::vector<double> predW, std::vector<double> predB) {
    ModelParams m = ModelParams::zeros(arch);
    m.repr.find("repr.W0")->data = {1, 0, 0, 1};
    m.repr.find("repr.b0")->data = {5, 5};
    m.repr.find("repr.W1")->data = {1, 0, 0, 1};
    m.repr.find("repr.b1")->data = {-5, -5};
    m.pred.find("pred.W")->data = std::move(predW);
    m.pred.find("pred.b")->data = std::move(predB);
    return m;
  };
  std::vector<ModelParams> ms;
  ms.push_back(passthrough({2, -2, 0.5, -0.5}, {0.1, -0.1}));
  ms.push_back(passthrough({-1, 1, 2, -2}, {0, 0.2}));
  ms.push_back(passthrough({0.5, -0.5, -1.5, 1.5}, {-0.3, 0}));

  data::LabeledDataset pts;
  pts.n_classes = 2;
  pts.features = Tensor::matrix(
      8, 2, {1, 1, -1, -1, 2, -1, -2, 1, 0.5, 2, -0.5, -2, 3, 0.1, -3, -0.1});
  pts.labels = {0, 1, 0, 1, 0, 1, 0, 1};

  // independent enumeration with hand-rolled softmax
  double correct = 0;
  for (int i = 0; i < 8; ++i) {
    double p0 = 0, p1 = 0;
    for (const auto& m : ms) {
      const Tensor& W = *m.pred.find("pred.W");
      const Tensor& b = *m.pred.find("pred.b");
      double x0 = pts.features.at(i, 0), x1 = pts.features.at(i, 1);
      double l0 = x0 * W.at(0, 0) + x1 * W.at(1, 0) + b.data[0];
      double l1 = x0 * W.at(0, 1) + x1 * W.at(1, 1) + b.data[1];
      double mx = std::max(l0, l1);
      double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
      p0 += e0 / (e0 + e1);
      p1 += e1 / (e0 + e1);
    }
    int pred = p1 > p0 ? 1 : 0;
    if (pred == pts.labels[static_cast<std::size_t>(i)]) correct += 1;
  }
  CHECK(fedensemble_evaluate(ms, pts) == doctest::Approx(correct / 8.0));
}

TEST_CASE("federation config validation") {
  FederationConfig cfg;
  cfg.K = 0;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = {};
  cfg.active_fraction = 1.5;
  CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
  cfg = {};
  cfg.method = method_from_string("fedgenp");
  CHECK(to_string(cfg.method) == "fedgenp");
  CHECK_THROWS_AS(method_from_string("fedsgd"), std::invalid_argument);
}

TEST_SUITE_END();
