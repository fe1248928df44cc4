#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fhs/datasets.hpp"
#include "fhs/models.hpp"
#include "fhs/optim.hpp"

namespace fhs::fed {

enum class Method { fedavg, fedensemble, fedgen, fedgenp };
Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct FederationConfig {
  int K = 20;
  double active_fraction = 1.0;  // r: share of clients participating per round
  int rounds = 100;
  int local_steps = 20;  // T: local epochs
  Method method = Method::fedavg;
  int m_k = 32;        // generated samples per client per epoch
  double w_gen = 1.0;  // weight of the generated-data loss term
  std::uint64_t seed = 0;

  // server-side generator training
  int gen_steps = 200;
  double gen_lr = 0.01;
  int gen_batch = 32;
  double lambda_grl = 1.0;
  int lambda_decay_rounds = -1;  // linear decay of lambda to 0 by this round; -1 keeps it fixed
  double beta_kl = 0.05;

  bool weighted_aggregation = false;  // sample-count weights instead of the uniform mean
  bool persist_generators = false;    // warm-start generators across rounds
};
void validate(const FederationConfig& cfg);

struct RoundMetrics {
  int round = 0;
  double global_accuracy = 0.0;
  double global_loss = 0.0;
  std::vector<double> per_client_accuracy;
  long wall_ms = 0;
};

// Uniform elementwise mean over architecturally identical parameter sets.
// Per element the contributions are summed in sorted order, which makes the
// result exactly permutation-invariant and exactly idempotent on equal
// inputs (a plain left-to-right sum is neither, bitwise).
models::ModelParams aggregate(const std::vector<models::ModelParams>& clients);
models::ModelParams aggregate_weighted(const std::vector<models::ModelParams>& clients,
                                       const std::vector<double>& weights);

// T epochs of seeded mini-batch cross-entropy SGD starting from `init`;
// `init` is left untouched. The client's samples are reached only through
// its own ClientDataset.
models::ModelParams local_train(const data::ClientDataset& client,
                                const models::ModelParams& init, int T, const SgdConfig& sgd,
                                std::uint64_t seed);

// Same, but each epoch additionally draws m_k labeled latents from the
// dispatched generator; they enter after the representation, weighted by
// w_gen. gen == nullptr, m_k == 0 or w_gen == 0 reduce to local_train
// bit for bit under the same seed.
models::ModelParams local_train_with_generator(const data::ClientDataset& client,
                                               const models::ModelParams& init,
                                               const models::GeneratorParams* gen, int T,
                                               const SgdConfig& sgd, int m_k, double w_gen,
                                               std::uint64_t seed);

// One generator per client k, freshly initialized from seed(round,k) unless
// warm_start supplies the previous round's generators, each trained `steps`
// SGD iterations on the adversarial objective with self index k.
std::vector<models::GeneratorParams> train_generators_server(
    const std::vector<const ParamSet*>& predictors, const models::GeneratorSpec& spec, int steps,
    double lr, int batch, const models::GrlSpec& grl, double beta_kl, std::uint64_t seed,
    std::vector<models::GeneratorParams>* warm_start = nullptr);

// fedgen baseline: a single shared generator minimizing sum_i J^i
models::GeneratorParams train_shared_generator(const std::vector<const ParamSet*>& predictors,
                                               const models::GeneratorSpec& spec, int steps,
                                               double lr, int batch, double beta_kl,
                                               std::uint64_t seed);

// averages the K class-probability vectors per test point, argmax with ties
// toward the lower class index
models::EvalResult fedensemble_evaluate_full(const std::vector<models::ModelParams>& clients,
                                             const data::LabeledDataset& test);
double fedensemble_evaluate(const std::vector<models::ModelParams>& clients,
                            const data::LabeledDataset& test);

struct ExperimentSetup {
  std::vector<data::ClientDataset> clients;
  data::LabeledDataset test;
  models::MlpSpec arch;
  models::GeneratorSpec gen_arch;
  SgdConfig sgd;
};
void validate_setup(const FederationConfig& cfg, const ExperimentSetup& setup);

struct FederationState {
  models::ModelParams global;
  std::vector<models::ModelParams> locals;
  std::vector<models::GeneratorParams> generators;  // persist_generators mode only
  int next_round = 1;
};

// Algorithm start: the server initializes the global model, broadcasts it,
// and every client trains locally once. No metrics row is produced.
FederationState initialize(const FederationConfig& cfg, const ExperimentSetup& setup);

// One communication round: sample active clients, aggregate the previous
// locals into the global model, train/dispatch generators when the method
// calls for them, retrain active clients, and measure on the test set.
RoundMetrics run_round(FederationState& state, const FederationConfig& cfg,
                       const ExperimentSetup& setup);

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  models::ModelParams global;
  std::vector<models::ModelParams> locals;
};
ExperimentResult run_experiment(const FederationConfig& cfg, const ExperimentSetup& setup);

// empirical risk of the probability-averaged ensemble next to the average
// of the members' risks (the Jensen step of the bound's proof); exposed for
// tests and the bound report
struct JensenCheck {
  double ensemble_risk = 0.0;
  double mean_member_risk = 0.0;
};
JensenCheck jensen_ensemble_check(const std::vector<models::ModelParams>& clients,
                                  const data::LabeledDataset& eval);

}  // namespace fhs::fed
