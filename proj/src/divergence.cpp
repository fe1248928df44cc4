#include "fhs/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fhs/kernels.hpp"
#include "fhs/optim.hpp"
#include "fhs/rng.hpp"
#include "fhs/tape.hpp"

namespace fhs::divergence {

double exact_hdh_distance_1d(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("exact_hdh_distance_1d: empty sample set");
  // Walk the pooled sorted samples; D(c) = F_a(c) - F_b(c) after each cut.
  // The best interval gap is max D - min D (the empty interval contributes
  // 0, so the result is never negative).
  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(a.size() + b.size());
  for (double v : a) pooled.emplace_back(v, 0);
  for (double v : b) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end());

  const double step_a = 1.0 / static_cast<double>(a.size());
  const double step_b = 1.0 / static_cast<double>(b.size());
  double diff = 0.0, max_d = 0.0, min_d = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    // advance past ties so cuts sit strictly between distinct values
    double v = pooled[i].first;
    while (i < pooled.size() && pooled[i].first == v) {
      diff += pooled[i].second == 0 ? step_a : -step_b;
      ++i;
    }
    max_d = std::max(max_d, diff);
    min_d = std::min(min_d, diff);
  }
  return 2.0 * (max_d - min_d);
}

HypothesisClassSpec::Kind hypothesis_kind_from_string(const std::string& s) {
  if (s == "threshold1d") return HypothesisClassSpec::Kind::threshold1d;
  if (s == "linear") return HypothesisClassSpec::Kind::linear;
  if (s == "mlp") return HypothesisClassSpec::Kind::mlp;
  throw std::invalid_argument("unknown hypothesis kind '" + s +
                              "' (expected threshold1d|linear|mlp)");
}

namespace {

// Trainable hypothesis over raw feature vectors: a linear softmax layer or
// a one-hidden-layer MLP. The output layer starts at zero so an untrained
// hypothesis predicts the uniform distribution.
class TrainedHypothesis {
 public:
  TrainedHypothesis(const HypothesisClassSpec& spec, int input_dim, int n_classes,
                    std::uint64_t seed)
      : spec_(spec), input_dim_(input_dim), n_classes_(n_classes) {
    if (spec.kind == HypothesisClassSpec::Kind::threshold1d)
      throw std::invalid_argument("threshold1d hypotheses are enumerated, not trained");
    if (spec.kind == HypothesisClassSpec::Kind::mlp) {
      Rng rng(seed);
      Tensor W0({input_dim, spec.hidden});
      const double sd = 1.0 / std::sqrt(static_cast<double>(input_dim));
      for (auto& v : W0.data) v = rng.normal(0.0, sd);
      ps_.add("W0", std::move(W0));
      ps_.add("b0", Tensor({spec.hidden}));
      ps_.add("W", Tensor({spec.hidden, n_classes}));
      ps_.add("b", Tensor({n_classes}));
    } else {
      ps_.add("W", Tensor({input_dim, n_classes}));
      ps_.add("b", Tensor({n_classes}));
    }
  }

  void fit(const Tensor& x, const std::vector<int>& y, int steps, std::uint64_t seed) {
    if (steps <= 0) return;
    Tape t;
    auto xin = t.input("x", {-1, input_dim_});
    auto yin = t.input("y", {-1});
    Tape::NodeId feats = xin;
    if (spec_.kind == HypothesisClassSpec::Kind::mlp)
      feats = t.relu(t.add(t.matmul(xin, t.param(*ps_.find("W0"))), t.param(*ps_.find("b0"))));
    auto logits = t.add(t.matmul(feats, t.param(*ps_.find("W"))), t.param(*ps_.find("b")));
    t.set_output(t.negate(t.mean(t.select_label(t.log_softmax(logits), yin))));

    const int n = x.rows();
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    int cursor = n;  // forces a reshuffle on the first step
    for (int s = 0; s < steps; ++s) {
      if (cursor >= n) {
        rng.shuffle(order);
        cursor = 0;
      }
      const int to = std::min(n, cursor + spec_.batch_size);
      Tensor xb({to - cursor, input_dim_});
      Tensor yb({to - cursor});
      for (int r = cursor; r < to; ++r) {
        for (int j = 0; j < input_dim_; ++j)
          xb.at(r - cursor, j) = x.at(order[static_cast<std::size_t>(r)], j);
        yb.data[static_cast<std::size_t>(r - cursor)] =
            static_cast<double>(y[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]);
      }
      cursor = to;
      t.forward({xb, yb});
      t.backward();
      sgd_step(ps_, spec_.lr);
    }
  }

  Tensor probs(const Tensor& x) const {
    Tape t;
    auto xin = t.input("x", {-1, input_dim_});
    Tape::NodeId feats = xin;
    if (spec_.kind == HypothesisClassSpec::Kind::mlp)
      feats = t.relu(
          t.add(t.matmul(xin, t.constant(*ps_.find("W0"))), t.constant(*ps_.find("b0"))));
    auto logits = t.add(t.matmul(feats, t.constant(*ps_.find("W"))), t.constant(*ps_.find("b")));
    t.set_output(t.softmax(logits));
    return t.forward({x});
  }

  std::int64_t numel() const { return ps_.numel(); }

 private:
  HypothesisClassSpec spec_;
  ParamSet ps_;
  int input_dim_, n_classes_;
};

double zero_one_error(const Tensor& probs, const std::vector<int>& y) {
  int wrong = 0;
  for (int i = 0; i < probs.rows(); ++i)
    if (models::argmax_tie_low(probs.data.data() + static_cast<std::size_t>(i) * probs.cols(),
                               probs.cols()) != y[static_cast<std::size_t>(i)])
      ++wrong;
  return probs.rows() == 0 ? 0.0 : static_cast<double>(wrong) / probs.rows();
}

// best 1-D threshold-with-orientation classifier by training error
struct Threshold1d {
  double cut = 0.0;
  bool up = true;  // predict 1 for values above the cut
  int operator()(double v) const { return (v > cut) == up ? 1 : 0; }
};

Threshold1d fit_threshold(const std::vector<double>& vals, const std::vector<int>& y) {
  std::vector<double> sorted = vals;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cuts;
  cuts.push_back(sorted.front() - 1.0);
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] != sorted[i - 1]) cuts.push_back(0.5 * (sorted[i] + sorted[i - 1]));
  cuts.push_back(sorted.back() + 1.0);

  Threshold1d best;
  int best_wrong = static_cast<int>(vals.size()) + 1;
  for (double c : cuts) {
    for (bool up : {true, false}) {
      Threshold1d h{c, up};
      int wrong = 0;
      for (std::size_t i = 0; i < vals.size(); ++i)
        if (h(vals[i]) != y[i]) ++wrong;
      if (wrong < best_wrong) {
        best_wrong = wrong;
        best = h;
      }
    }
  }
  return best;
}

}  // namespace

double proxy_hdh_distance(const Tensor& latents_a, const Tensor& latents_b,
                          const HypothesisClassSpec& spec, std::uint64_t seed) {
  const int na = latents_a.rows(), nb = latents_b.rows();
  if (na < 20 || nb < 20)
    throw std::invalid_argument("proxy_hdh_distance: need at least 20 samples per side");
  if (latents_a.cols() != latents_b.cols())
    throw std::invalid_argument("proxy_hdh_distance: latent dims differ");
  if (spec.kind == HypothesisClassSpec::Kind::threshold1d && latents_a.cols() != 1)
    throw std::invalid_argument("proxy_hdh_distance: threshold1d needs 1-D samples");
  const int dim = latents_a.cols();

  // seeded 70/30 split on each side
  auto split = [&](int n, std::uint64_t s) {
    Rng rng(s);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    rng.shuffle(idx);
    int cut = std::max(1, static_cast<int>(0.7 * n));
    return std::pair{std::vector<int>(idx.begin(), idx.begin() + cut),
                     std::vector<int>(idx.begin() + cut, idx.end())};
  };
  auto [train_a, held_a] = split(na, derive_seed(seed, "split_a"));
  auto [train_b, held_b] = split(nb, derive_seed(seed, "split_b"));

  auto stack = [&](const Tensor& src_a, const std::vector<int>& ia, const Tensor& src_b,
                   const std::vector<int>& ib, Tensor& x, std::vector<int>& y) {
    x = Tensor({static_cast<int>(ia.size() + ib.size()), dim});
    y.clear();
    int row = 0;
    for (int i : ia) {
      for (int j = 0; j < dim; ++j) x.at(row, j) = src_a.at(i, j);
      y.push_back(0);
      ++row;
    }
    for (int i : ib) {
      for (int j = 0; j < dim; ++j) x.at(row, j) = src_b.at(i, j);
      y.push_back(1);
      ++row;
    }
  };
  Tensor xtr, xhe;
  std::vector<int> ytr, yhe;
  stack(latents_a, train_a, latents_b, train_b, xtr, ytr);
  stack(latents_a, held_a, latents_b, held_b, xhe, yhe);

  double err;
  if (spec.kind == HypothesisClassSpec::Kind::threshold1d) {
    Threshold1d h = fit_threshold(xtr.data, ytr);
    int wrong = 0;
    for (std::size_t i = 0; i < xhe.data.size(); ++i)
      if (h(xhe.data[i]) != yhe[i]) ++wrong;
    err = static_cast<double>(wrong) / static_cast<double>(yhe.size());
  } else {
    TrainedHypothesis h(spec, dim, 2, derive_seed(seed, "disc_init"));
    h.fit(xtr, ytr, spec.steps, derive_seed(seed, "disc_fit"));
    err = zero_one_error(h.probs(xhe), yhe);
  }
  return std::clamp(2.0 * (1.0 - 2.0 * err), 0.0, 2.0);
}

double estimate_lambda(const data::LabeledDataset& a, const data::LabeledDataset& b,
                       const HypothesisClassSpec& spec, int budget_steps, std::uint64_t seed) {
  if (a.n() == 0 || b.n() == 0) throw std::invalid_argument("estimate_lambda: empty dataset");
  if (a.dim() != b.dim() || a.n_classes != b.n_classes)
    throw std::invalid_argument("estimate_lambda: datasets disagree on shape");

  Tensor xu({a.n() + b.n(), a.dim()});
  std::vector<int> yu;
  yu.reserve(static_cast<std::size_t>(a.n() + b.n()));
  for (int i = 0; i < a.n(); ++i) {
    for (int j = 0; j < a.dim(); ++j) xu.at(i, j) = a.features.at(i, j);
    yu.push_back(a.labels[static_cast<std::size_t>(i)]);
  }
  for (int i = 0; i < b.n(); ++i) {
    for (int j = 0; j < b.dim(); ++j) xu.at(a.n() + i, j) = b.features.at(i, j);
    yu.push_back(b.labels[static_cast<std::size_t>(i)]);
  }

  TrainedHypothesis h(spec, a.dim(), a.n_classes, derive_seed(seed, "lambda_init"));
  h.fit(xu, yu, budget_steps, derive_seed(seed, "lambda_fit"));
  double risk_a = models::evaluate_probs(h.probs(a.features), a.labels).tv_risk;
  double risk_b = models::evaluate_probs(h.probs(b.features), b.labels).tv_risk;
  return risk_a + risk_b;
}

double vc_confidence_term(double m, double d, double delta, int K) {
  if (!(m > 0)) throw std::invalid_argument("vc_confidence_term: m must be > 0");
  if (!(d >= 1)) throw std::invalid_argument("vc_confidence_term: d must be >= 1");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("vc_confidence_term: delta must be in (0,1)");
  if (K < 1) throw std::invalid_argument("vc_confidence_term: K must be >= 1");
  const double e = 2.718281828459045235360287471353;
  return std::sqrt(4.0 / m *
                   (d * std::log(2.0 * e * m / d) + std::log(4.0 * static_cast<double>(K) / delta)));
}

double theorem1_bound(const BoundComponents& c) {
  if (c.K < 1) throw std::invalid_argument("theorem1_bound: K must be >= 1");
  const std::size_t K = static_cast<std::size_t>(c.K);
  if (c.empirical_risks.size() != K || c.distances.size() != K || c.lambdas.size() != K)
    throw std::invalid_argument("theorem1_bound: component lists must all have length K");
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    s += c.empirical_risks[k] + c.distances[k] + c.lambdas[k];
  return s / static_cast<double>(c.K) + vc_confidence_term(c.m, c.d, c.delta, c.K);
}

double per_pair_lemma1_bound(double emp_risk, double distance, double lambda, double m, double d,
                             double delta) {
  return emp_risk + distance + lambda + vc_confidence_term(m, d, delta, 1);
}

BoundReport evaluate_theorem1(const std::vector<data::ClientDataset>& clients,
                              const models::ModelParams& global,
                              const std::vector<models::ModelParams>& locals,
                              const BoundEvalConfig& cfg) {
  const int K = static_cast<int>(clients.size());
  if (K == 0 || locals.size() != clients.size())
    throw std::invalid_argument("evaluate_theorem1: client/model count mismatch");

  // latents under the shared (aggregated) representation
  std::vector<Tensor> latents(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    models::classifier_forward(global, clients[static_cast<std::size_t>(k)].data.features,
                               &latents[static_cast<std::size_t>(k)]);

  // hypothesis k = client k's predictor on the shared latents
  std::vector<double> emp_risk(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    models::ModelParams hybrid = global;
    hybrid.pred = locals[static_cast<std::size_t>(k)].pred;
    emp_risk[static_cast<std::size_t>(k)] =
        models::evaluate(hybrid, clients[static_cast<std::size_t>(k)].data.features,
                         clients[static_cast<std::size_t>(k)].data.labels)
            .tv_risk;
  }

  // pairwise distances and lambdas over the latent datasets; both are
  // symmetric, so only the upper triangle is computed
  std::vector<std::vector<double>> dist(static_cast<std::size_t>(K),
                                        std::vector<double>(static_cast<std::size_t>(K), 0.0));
  std::vector<std::vector<double>> lam(static_cast<std::size_t>(K),
                                       std::vector<double>(static_cast<std::size_t>(K), 0.0));
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < K; ++i)
    for (int j = i; j < K; ++j) pairs.emplace_back(i, j);

  std::vector<std::exception_ptr> errors(pairs.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::max_threads())
  for (int p = 0; p < static_cast<int>(pairs.size()); ++p) {
    try {
      auto [i, j] = pairs[static_cast<std::size_t>(p)];
      data::LabeledDataset li{latents[static_cast<std::size_t>(i)],
                              clients[static_cast<std::size_t>(i)].data.labels,
                              clients[static_cast<std::size_t>(i)].data.n_classes};
      data::LabeledDataset lj{latents[static_cast<std::size_t>(j)],
                              clients[static_cast<std::size_t>(j)].data.labels,
                              clients[static_cast<std::size_t>(j)].data.n_classes};
      if (i != j)
        dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = proxy_hdh_distance(
            latents[static_cast<std::size_t>(i)], latents[static_cast<std::size_t>(j)],
            cfg.hypothesis,
            derive_seed(cfg.seed, "dist", static_cast<std::uint64_t>(i),
                        static_cast<std::uint64_t>(j)));
      lam[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = estimate_lambda(
          li, lj, cfg.hypothesis, cfg.lambda_budget,
          derive_seed(cfg.seed, "lambda", static_cast<std::uint64_t>(i),
                      static_cast<std::uint64_t>(j)));
    } catch (...) {
      errors[static_cast<std::size_t>(p)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (int i = 0; i < K; ++i)
    for (int j = i + 1; j < K; ++j) {
      dist[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
          dist[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      lam[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] =
          lam[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }

  BoundReport rep;
  rep.d_surrogate = static_cast<double>(locals.front().pred.numel());
  rep.delta = cfg.delta;
  rep.m_mode = cfg.m_mode;
  rep.distance_matrix = dist;
  rep.lambda_matrix = lam;

  double min_m = static_cast<double>(clients.front().data.n());
  for (const auto& c : clients) min_m = std::min(min_m, static_cast<double>(c.data.n()));
  rep.m_used = min_m;

  for (int kp = 0; kp < K; ++kp) {
    BoundRow row;
    row.client = kp;
    double vc_inside = 0.0;
    for (int k = 0; k < K; ++k) {
      row.mean_risk += emp_risk[static_cast<std::size_t>(k)];
      row.mean_distance += dist[static_cast<std::size_t>(k)][static_cast<std::size_t>(kp)];
      row.mean_lambda += lam[static_cast<std::size_t>(k)][static_cast<std::size_t>(kp)];
      if (cfg.m_mode == SampleCountMode::per_pair)
        vc_inside += vc_confidence_term(
            static_cast<double>(clients[static_cast<std::size_t>(k)].data.n()), rep.d_surrogate,
            cfg.delta, K);
    }
    row.mean_risk /= K;
    row.mean_distance /= K;
    row.mean_lambda /= K;
    row.vc_term = cfg.m_mode == SampleCountMode::min_m
                      ? vc_confidence_term(min_m, rep.d_surrogate, cfg.delta, K)
                      : vc_inside / K;
    row.bound = row.mean_risk + row.mean_distance + row.mean_lambda + row.vc_term;
    row.measured_risk = models::evaluate(global, clients[static_cast<std::size_t>(kp)].data.features,
                                         clients[static_cast<std::size_t>(kp)].data.labels)
                            .tv_risk;
    rep.rows.push_back(row);
  }
  return rep;
}

std::string format_report(const BoundReport& report) {
  std::ostringstream os;
  os << "# theorem-1 bound report\n";
  os << "# d = " << report.d_surrogate
     << " (trainable-parameter surrogate for the VC dimension, not a computed VC value)\n";
  os << "# distances are proxy A-distance estimates in latent space; lambdas are "
        "union-trained upper estimates\n";
  os << "# m = " << report.m_used << " ("
     << (report.m_mode == SampleCountMode::min_m ? "min over clients" : "per-pair") << "), delta = "
     << report.delta << ", K = " << report.rows.size() << "\n";
  os << "client, risk, mean_distance, mean_lambda, vc_term, bound, measured_risk\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%d, %.6f, %.6f, %.6f, %.6f, %.6f, %.6f\n", r.client,
                  r.mean_risk, r.mean_distance, r.mean_lambda, r.vc_term, r.bound,
                  r.measured_risk);
    os << buf;
  }
  return os.str();
}

void write_report(const BoundReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_report: cannot open " + path);
  f << format_report(report);
}

}  // namespace fhs::divergence
