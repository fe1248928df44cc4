#include "fhs/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fhs::models {

namespace {

Tensor random_weights(Rng& rng, int rows, int cols) {
  Tensor t({rows, cols});
  const double sd = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : t.data) v = rng.normal(0.0, sd);
  return t;
}

void check_label(int y, int n_classes) {
  if (y < 0 || y >= n_classes)
    throw std::invalid_argument("label out of range: " + std::to_string(y) + " (classes " +
                                std::to_string(n_classes) + ")");
}

Tensor& named(ParamSet& ps, const char* name) {
  Tensor* t = ps.find(name);
  if (!t) throw std::logic_error(std::string("missing parameter ") + name);
  return *t;
}

const Tensor& named(const ParamSet& ps, const char* name) {
  const Tensor* t = ps.find(name);
  if (!t) throw std::logic_error(std::string("missing parameter ") + name);
  return *t;
}

}  // namespace

ModelParams ModelParams::init(const MlpSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ModelParams m;
  m.arch = spec;
  m.repr.add("repr.W0", random_weights(rng, spec.input_dim, spec.hidden));
  m.repr.add("repr.b0", Tensor({spec.hidden}));
  m.repr.add("repr.W1", random_weights(rng, spec.hidden, spec.latent_dim));
  m.repr.add("repr.b1", Tensor({spec.latent_dim}));
  m.pred.add("pred.W", random_weights(rng, spec.latent_dim, spec.n_classes));
  m.pred.add("pred.b", Tensor({spec.n_classes}));
  return m;
}

ModelParams ModelParams::zeros(const MlpSpec& spec) {
  ModelParams m;
  m.arch = spec;
  m.repr.add("repr.W0", Tensor({spec.input_dim, spec.hidden}));
  m.repr.add("repr.b0", Tensor({spec.hidden}));
  m.repr.add("repr.W1", Tensor({spec.hidden, spec.latent_dim}));
  m.repr.add("repr.b1", Tensor({spec.latent_dim}));
  m.pred.add("pred.W", Tensor({spec.latent_dim, spec.n_classes}));
  m.pred.add("pred.b", Tensor({spec.n_classes}));
  return m;
}

bool ModelParams::same_architecture(const ModelParams& other) const {
  if (repr.size() != other.repr.size() || pred.size() != other.pred.size()) return false;
  for (std::size_t i = 0; i < repr.size(); ++i)
    if (repr.items[i].first != other.repr.items[i].first ||
        repr.items[i].second.shape != other.repr.items[i].second.shape)
      return false;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred.items[i].first != other.pred.items[i].first ||
        pred.items[i].second.shape != other.pred.items[i].second.shape)
      return false;
  return true;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [n, t] : repr.items) out.emplace_back(n, &t);
  for (const auto& [n, t] : pred.items) out.emplace_back(n, &t);
  return out;
}

ModelParams ModelParams::from_named_tensors(
    const MlpSpec& spec, const std::vector<std::pair<std::string, Tensor>>& ts) {
  ModelParams m = ModelParams::zeros(spec);
  for (const auto& [name, t] : ts) {
    Tensor* dst = m.repr.find(name);
    if (!dst) dst = m.pred.find(name);
    if (!dst) throw std::runtime_error("unknown tensor in checkpoint: " + name);
    if (dst->shape != t.shape)
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(t.shape) +
                               ", expected " + shape_str(dst->shape));
    dst->data = t.data;
  }
  return m;
}

namespace {

// representation + predictor wired onto a tape; params enter as constants
// (evaluation) or trainable nodes (ClassifierLoss)
struct WiredClassifier {
  Tape::NodeId latent, logits;
};

template <typename Bind>
WiredClassifier wire_classifier(Tape& t, Tape::NodeId x, Bind bind) {
  auto h = t.relu(t.add(t.matmul(x, bind("repr.W0")), bind("repr.b0")));
  auto z = t.add(t.matmul(h, bind("repr.W1")), bind("repr.b1"));
  auto logits = t.add(t.matmul(z, bind("pred.W")), bind("pred.b"));
  return {z, logits};
}

}  // namespace

Tensor classifier_forward(const ModelParams& m, const Tensor& x, Tensor* latents) {
  if (x.cols() != m.arch.input_dim)
    throw std::invalid_argument("classifier_forward: input has " + std::to_string(x.cols()) +
                                " columns, model expects " + std::to_string(m.arch.input_dim));
  Tape t;
  auto xin = t.input("x", {-1, m.arch.input_dim});
  auto bind = [&](const char* name) {
    const Tensor* p = m.repr.find(name);
    if (!p) p = m.pred.find(name);
    return t.constant(*p);
  };
  auto wired = wire_classifier(t, xin, bind);
  auto probs = t.softmax(wired.logits);
  t.set_output(probs);
  Tensor x2 = x;
  if (x2.shape.size() == 1) x2.shape = {1, m.arch.input_dim};
  Tensor out = t.forward({x2});
  if (latents) *latents = t.value(wired.latent);
  return out;
}

int argmax_tie_low(const double* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

EvalResult evaluate_probs(const Tensor& probs, const std::vector<int>& labels) {
  const int n = probs.rows(), c = probs.cols();
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("evaluate_probs: label count mismatch");
  if (n == 0) return {};
  EvalResult r;
  double correct = 0, ce = 0, tv = 0;
  for (int i = 0; i < n; ++i) {
    const double* row = probs.data.data() + static_cast<std::size_t>(i) * c;
    check_label(labels[static_cast<std::size_t>(i)], c);
    if (argmax_tie_low(row, c) == labels[static_cast<std::size_t>(i)]) correct += 1;
    ce += -std::log(std::max(row[labels[static_cast<std::size_t>(i)]], 1e-300));
    double l1 = 0;
    for (int j = 0; j < c; ++j)
      l1 += std::abs(row[j] - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
    tv += 0.5 * l1;
  }
  r.accuracy = correct / n;
  r.mean_ce = ce / n;
  r.tv_risk = tv / n;
  return r;
}

EvalResult evaluate(const ModelParams& m, const Tensor& x, const std::vector<int>& labels) {
  return evaluate_probs(classifier_forward(m, x), labels);
}

ClassifierLoss::ClassifierLoss(ModelParams& m, double w_gen) : with_gen_(w_gen > 0.0) {
  x_ = tape_.input("x", {-1, m.arch.input_dim});
  labels_ = tape_.input("labels", {-1});
  auto bind = [&](const char* name) {
    Tensor* p = m.repr.find(name);
    if (!p) p = m.pred.find(name);
    return tape_.param(*p);
  };
  Tape::NodeId predW = bind("pred.W");
  Tape::NodeId predB = bind("pred.b");
  auto h = tape_.relu(tape_.add(tape_.matmul(x_, bind("repr.W0")), bind("repr.b0")));
  auto z = tape_.add(tape_.matmul(h, bind("repr.W1")), bind("repr.b1"));
  auto logits = tape_.add(tape_.matmul(z, predW), predB);
  auto ce_real = tape_.negate(tape_.mean(tape_.select_label(tape_.log_softmax(logits), labels_)));
  if (!with_gen_) {
    tape_.set_output(ce_real);
    return;
  }
  // generated latents skip the representation entirely
  zgen_ = tape_.input("z_gen", {-1, m.arch.latent_dim});
  labels_gen_ = tape_.input("labels_gen", {-1});
  auto logits_g = tape_.add(tape_.matmul(zgen_, predW), predB);
  auto ce_gen =
      tape_.negate(tape_.mean(tape_.select_label(tape_.log_softmax(logits_g), labels_gen_)));
  tape_.set_output(tape_.add(ce_real, tape_.scale(ce_gen, w_gen)));
}

double ClassifierLoss::step(const Tensor& x, const Tensor& labels, bool do_backward) {
  if (with_gen_)
    throw std::logic_error("ClassifierLoss: generated branch requires z_gen inputs");
  double v = tape_.forward({x, labels}).data[0];
  if (do_backward) tape_.backward();
  return v;
}

double ClassifierLoss::step(const Tensor& x, const Tensor& labels, const Tensor& z_gen,
                            const Tensor& labels_gen, bool do_backward) {
  if (!with_gen_) throw std::logic_error("ClassifierLoss: built without a generated branch");
  double v = tape_.forward({x, labels, z_gen, labels_gen}).data[0];
  if (do_backward) tape_.backward();
  return v;
}

GeneratorParams GeneratorParams::init(const GeneratorSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  GeneratorParams g;
  g.arch = spec;
  Tensor embed({spec.n_classes, spec.embed_dim});
  for (auto& v : embed.data) v = rng.normal();
  g.ps.add("gen.embed", std::move(embed));
  g.ps.add("gen.W0", random_weights(rng, spec.embed_dim, spec.hidden));
  g.ps.add("gen.b0", Tensor({spec.hidden}));
  g.ps.add("gen.Wm", random_weights(rng, spec.hidden, spec.latent_dim));
  g.ps.add("gen.bm", Tensor({spec.latent_dim}));
  g.ps.add("gen.Wv", random_weights(rng, spec.hidden, spec.latent_dim));
  g.ps.add("gen.bv", Tensor({spec.latent_dim}));
  return g;
}

namespace {

// mean and clamped log-variance of G(z|y) for one label
void generator_moments(const GeneratorParams& g, int y, std::vector<double>& mu,
                       std::vector<double>& lv) {
  const auto& spec = g.arch;
  check_label(y, spec.n_classes);
  const Tensor& embed = named(g.ps, "gen.embed");
  const Tensor& W0 = named(g.ps, "gen.W0");
  const Tensor& b0 = named(g.ps, "gen.b0");
  const Tensor& Wm = named(g.ps, "gen.Wm");
  const Tensor& bm = named(g.ps, "gen.bm");
  const Tensor& Wv = named(g.ps, "gen.Wv");
  const Tensor& bv = named(g.ps, "gen.bv");

  std::vector<double> h(static_cast<std::size_t>(spec.hidden));
  for (int j = 0; j < spec.hidden; ++j) {
    double s = b0.data[static_cast<std::size_t>(j)];
    for (int i = 0; i < spec.embed_dim; ++i) s += embed.at(y, i) * W0.at(i, j);
    h[static_cast<std::size_t>(j)] = s > 0.0 ? s : 0.0;
  }
  mu.assign(static_cast<std::size_t>(spec.latent_dim), 0.0);
  lv.assign(static_cast<std::size_t>(spec.latent_dim), 0.0);
  for (int j = 0; j < spec.latent_dim; ++j) {
    double sm = bm.data[static_cast<std::size_t>(j)];
    double sv = bv.data[static_cast<std::size_t>(j)];
    for (int i = 0; i < spec.hidden; ++i) {
      sm += h[static_cast<std::size_t>(i)] * Wm.at(i, j);
      sv += h[static_cast<std::size_t>(i)] * Wv.at(i, j);
    }
    mu[static_cast<std::size_t>(j)] = sm;
    lv[static_cast<std::size_t>(j)] = std::clamp(sv, kLogVarMin, kLogVarMax);
  }
}

}  // namespace

Tensor generator_sample(const GeneratorParams& g, int y, const Tensor& noise) {
  if (noise.size() != g.arch.latent_dim)
    throw std::invalid_argument("generator_sample: noise must have latent_dim entries");
  std::vector<double> mu, lv;
  generator_moments(g, y, mu, lv);
  Tensor z({g.arch.latent_dim});
  for (int j = 0; j < g.arch.latent_dim; ++j)
    z.data[static_cast<std::size_t>(j)] =
        mu[static_cast<std::size_t>(j)] +
        std::exp(0.5 * lv[static_cast<std::size_t>(j)]) * noise.data[static_cast<std::size_t>(j)];
  return z;
}

Tensor generator_sample(const GeneratorParams& g, int y, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  Tensor noise({g.arch.latent_dim});
  for (auto& v : noise.data) v = rng.normal();
  return generator_sample(g, y, noise);
}

Tensor generator_sample_batch(const GeneratorParams& g, const std::vector<int>& labels,
                              const Tensor& noise) {
  const int n = static_cast<int>(labels.size());
  if (noise.rows() != n || noise.cols() != g.arch.latent_dim)
    throw std::invalid_argument("generator_sample_batch: noise shape mismatch");
  Tensor z({n, g.arch.latent_dim});
  std::vector<double> mu, lv;
  for (int i = 0; i < n; ++i) {
    generator_moments(g, labels[static_cast<std::size_t>(i)], mu, lv);
    for (int j = 0; j < g.arch.latent_dim; ++j)
      z.at(i, j) = mu[static_cast<std::size_t>(j)] +
                   std::exp(0.5 * lv[static_cast<std::size_t>(j)]) * noise.at(i, j);
  }
  return z;
}

void validate(const GrlSpec& s) {
  if (s.lambda_grl < 0.0) throw std::invalid_argument("grl.lambda_grl must be >= 0");
}

Tape::NodeId grl_apply(const GrlSpec& spec, Tape& tape, Tape::NodeId z) {
  validate(spec);
  return tape.grl(z, spec.lambda_grl);
}

GeneratorBatch sample_generator_batch(int n, int n_classes, int latent_dim, Rng& rng) {
  GeneratorBatch b;
  b.labels = Tensor({n});
  for (auto& v : b.labels.data)
    v = static_cast<double>(rng.uniform_int(static_cast<std::uint64_t>(n_classes)));
  b.noise = Tensor({n, latent_dim});
  for (auto& v : b.noise.data) v = rng.normal();
  return b;
}

GeneratorObjective::GeneratorObjective(GeneratorParams& gen,
                                       const std::vector<const ParamSet*>& predictors,
                                       int self_index, const GrlSpec& grl, double beta_kl) {
  if (predictors.empty())
    throw std::invalid_argument("generator objective: predictors must be non-empty");
  if (self_index >= static_cast<int>(predictors.size()))
    throw std::invalid_argument("generator objective: self index out of range");
  validate(grl);
  const auto& spec = gen.arch;
  for (const ParamSet* p : predictors) {
    const Tensor& W = named(*p, "pred.W");
    if (W.rows() != spec.latent_dim)
      throw std::invalid_argument("generator objective: predictor latent dim " +
                                  std::to_string(W.rows()) + " != generator latent dim " +
                                  std::to_string(spec.latent_dim));
  }

  labels_ = tape_.input("labels", {-1});
  noise_ = tape_.input("noise", {-1, spec.latent_dim});

  auto e = tape_.gather_rows(tape_.param(named(gen.ps, "gen.embed")), labels_);
  auto h = tape_.relu(tape_.add(tape_.matmul(e, tape_.param(named(gen.ps, "gen.W0"))),
                                tape_.param(named(gen.ps, "gen.b0"))));
  auto mu = tape_.add(tape_.matmul(h, tape_.param(named(gen.ps, "gen.Wm"))),
                      tape_.param(named(gen.ps, "gen.bm")));
  auto lv = tape_.clamp(tape_.add(tape_.matmul(h, tape_.param(named(gen.ps, "gen.Wv"))),
                                  tape_.param(named(gen.ps, "gen.bv"))),
                        kLogVarMin, kLogVarMax);
  auto z = tape_.reparameterize(mu, lv, noise_);

  auto cross_entropy_on = [&](Tape::NodeId zin, const ParamSet& pred) {
    auto logits = tape_.add(tape_.matmul(zin, tape_.constant(named(pred, "pred.W"))),
                            tape_.constant(named(pred, "pred.b")));
    return tape_.negate(tape_.mean(tape_.select_label(tape_.log_softmax(logits), labels_)));
  };

  Tape::NodeId opt = -1;
  auto accumulate = [&](Tape::NodeId term) { opt = opt < 0 ? term : tape_.add(opt, term); };

  for (int i = 0; i < static_cast<int>(predictors.size()); ++i) {
    if (i == self_index) continue;
    auto ce = cross_entropy_on(z, *predictors[static_cast<std::size_t>(i)]);
    other_ce_.push_back(ce);
    accumulate(ce);
  }
  if (self_index >= 0) {
    grl_node_ = grl_apply(grl, tape_, z);
    self_ce_ = cross_entropy_on(grl_node_, *predictors[static_cast<std::size_t>(self_index)]);
    accumulate(self_ce_);
  }

  // KL(N(mu, e^lv) || N(0, I)) averaged over the batch
  auto musq = tape_.mul(mu, mu);
  auto inner = tape_.add(tape_.add(musq, tape_.exp(lv)), tape_.negate(lv));
  kl_ = tape_.scale(tape_.add_const(tape_.mean(tape_.row_sum(inner)),
                                    -static_cast<double>(spec.latent_dim)),
                    0.5);
  accumulate(tape_.scale(kl_, beta_kl));
  tape_.set_output(opt);
}

double GeneratorObjective::run(const GeneratorBatch& batch, bool do_backward) {
  tape_.forward({batch.labels, batch.noise});
  if (do_backward) tape_.backward();
  last_others_ = 0.0;
  for (auto ce : other_ce_) last_others_ += tape_.value(ce).data[0];
  last_self_ = self_ce_ >= 0 ? tape_.value(self_ce_).data[0] : 0.0;
  last_kl_ = tape_.value(kl_).data[0];
  return last_others_ - last_self_;
}

double GeneratorObjective::loss(const GeneratorBatch& batch) { return run(batch, false); }

double GeneratorObjective::step(const GeneratorBatch& batch) { return run(batch, true); }

void GeneratorObjective::set_lambda(double lambda) {
  if (grl_node_ >= 0) tape_.set_grl_lambda(grl_node_, lambda);
}

double generator_loss(GeneratorParams& gen, const std::vector<const ParamSet*>& predictors,
                      int self_index, const GeneratorBatch& batch, const GrlSpec& grl,
                      double beta_kl) {
  if (self_index < 0)
    throw std::invalid_argument("generator_loss: self index must name one predictor");
  GeneratorObjective obj(gen, predictors, self_index, grl, beta_kl);
  return obj.loss(batch);
}

}  // namespace fhs::models
