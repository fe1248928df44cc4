#pragma once

#include <cstdint>
#include <vector>

#include "fhs/params.hpp"
#include "fhs/rng.hpp"
#include "fhs/tape.hpp"

namespace fhs::models {

// Classifier f = predictor ∘ representation. The representation is a small
// MLP input -> hidden -> latent, the predictor a single linear layer
// latent -> classes; widths are configurable.
struct MlpSpec {
  int input_dim = 2;
  int hidden = 64;
  int latent_dim = 32;
  int n_classes = 2;
};

struct ModelParams {
  MlpSpec arch;
  ParamSet repr;  // repr.W0 [in x h], repr.b0 [h], repr.W1 [h x latent], repr.b1 [latent]
  ParamSet pred;  // pred.W [latent x C], pred.b [C]

  static ModelParams init(const MlpSpec& spec, std::uint64_t seed);
  // all-zero weights; softmax of zero logits is uniform
  static ModelParams zeros(const MlpSpec& spec);

  std::int64_t numel() const { return repr.numel() + pred.numel(); }
  void zero_grads() { repr.zero_grads(); pred.zero_grads(); }
  bool same_architecture(const ModelParams& other) const;

  // checkpoint order: repr tensors then pred tensors
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  static ModelParams from_named_tensors(const MlpSpec& spec,
                                        const std::vector<std::pair<std::string, Tensor>>& ts);
};

// class probabilities [n x C]; latents z = r(x) optionally exposed for
// divergence estimation
Tensor classifier_forward(const ModelParams& m, const Tensor& x, Tensor* latents = nullptr);

// argmax with ties broken toward the lower class index
int argmax_tie_low(const double* row, int n);

struct EvalResult {
  double accuracy = 0.0;
  double mean_ce = 0.0;
  double tv_risk = 0.0;  // mean over samples of (1/2) sum_c |p_c - onehot_c|
};
EvalResult evaluate_probs(const Tensor& probs, const std::vector<int>& labels);
EvalResult evaluate(const ModelParams& m, const Tensor& x, const std::vector<int>& labels);

// Training tape over one model: mean cross-entropy on real minibatches plus
// an optional generated-latent branch that enters after the representation,
// so representation gradients come only from real data.
class ClassifierLoss {
 public:
  // w_gen <= 0 builds the plain tape with no generated branch
  ClassifierLoss(ModelParams& m, double w_gen);

  // real batch only (valid when built without the generated branch)
  double step(const Tensor& x, const Tensor& labels, bool do_backward);
  // real batch + generated latents (z_gen [g x latent], labels_gen [g])
  double step(const Tensor& x, const Tensor& labels, const Tensor& z_gen,
              const Tensor& labels_gen, bool do_backward);

  bool has_generated_branch() const { return with_gen_; }

 private:
  Tape tape_;
  Tape::NodeId x_ = -1, labels_ = -1, zgen_ = -1, labels_gen_ = -1;
  bool with_gen_ = false;
};

// Class-conditional latent generator G(z|y): a per-class embedding feeds a
// shared trunk that outputs the mean and log-variance of a Gaussian over Z;
// samples are drawn by reparameterization. Log-variance is clamped to
// [-8, 8] after every forward.
struct GeneratorSpec {
  int n_classes = 2;
  int latent_dim = 32;
  int embed_dim = 32;
  int hidden = 128;
};

struct GeneratorParams {
  GeneratorSpec arch;
  ParamSet ps;  // gen.embed [C x E], gen.W0 [E x H], gen.b0, gen.Wm, gen.bm, gen.Wv, gen.bv

  static GeneratorParams init(const GeneratorSpec& spec, std::uint64_t seed);
};

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

// z = mean(y) + exp(0.5 * logvar(y)) (.) noise, noise of shape [latent_dim]
Tensor generator_sample(const GeneratorParams& g, int y, const Tensor& noise);
// draws the noise from a stream seeded by rng_seed
Tensor generator_sample(const GeneratorParams& g, int y, std::uint64_t rng_seed);
// one row per (label, noise row) pair
Tensor generator_sample_batch(const GeneratorParams& g, const std::vector<int>& labels,
                              const Tensor& noise);

struct GrlSpec {
  double lambda_grl = 1.0;
};
void validate(const GrlSpec& s);

// inserts a gradient-reversal node: identity forward, upstream gradient g
// becomes -lambda_grl * g on the way down
Tape::NodeId grl_apply(const GrlSpec& spec, Tape& tape, Tape::NodeId z);

// a (y, noise) minibatch for the generator objective; labels are uniform
// over classes, noise is standard normal
struct GeneratorBatch {
  Tensor labels;  // [n], integer-valued
  Tensor noise;   // [n x latent_dim]
};
GeneratorBatch sample_generator_batch(int n, int n_classes, int latent_dim, Rng& rng);

// The adversarial generator objective: J = sum_{i != k} J^i - J^k, where
// J^i is the mean cross-entropy of (frozen) predictor i on generated (z, y).
// The -J^k term is realized through a gradient-reversal node, so one
// minimizing SGD loop optimizes J directly; a KL(q || N(0,I)) penalty with
// weight beta_kl keeps the generated latents in distribution.
// self_index < 0 drops the reversed branch (shared-generator objective
// sum_i J^i, used by the fedgen baseline).
class GeneratorObjective {
 public:
  GeneratorObjective(GeneratorParams& gen, const std::vector<const ParamSet*>& predictors,
                     int self_index, const GrlSpec& grl, double beta_kl);

  // forward only; returns J for this batch
  double loss(const GeneratorBatch& batch);
  // forward + backward of the optimization objective; returns J
  double step(const GeneratorBatch& batch);

  double last_kl() const { return last_kl_; }
  double last_self_term() const { return last_self_; }
  double last_other_sum() const { return last_others_; }
  void set_lambda(double lambda);

 private:
  double run(const GeneratorBatch& batch, bool do_backward);

  Tape tape_;
  Tape::NodeId labels_ = -1, noise_ = -1, grl_node_ = -1;
  std::vector<Tape::NodeId> other_ce_;
  Tape::NodeId self_ce_ = -1;
  Tape::NodeId kl_ = -1;
  double last_kl_ = 0.0, last_self_ = 0.0, last_others_ = 0.0;
};

// convenience wrapper: J evaluated on one batch (predictors frozen)
double generator_loss(GeneratorParams& gen, const std::vector<const ParamSet*>& predictors,
                      int self_index, const GeneratorBatch& batch,
                      const GrlSpec& grl = GrlSpec{}, double beta_kl = 0.0);

}  // namespace fhs::models
