#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fhs/datasets.hpp"
#include "fhs/models.hpp"

namespace fhs::divergence {

// Exact empirical H∆H-distance for the 1-D threshold hypothesis class:
// disagreement regions of threshold pairs are intervals with endpoints at
// sample midpoints, and the returned value is 2 * sup over those intervals
// of the empirical measure gap. Always in [0, 2], 0 for identical multisets.
double exact_hdh_distance_1d(const std::vector<double>& a, const std::vector<double>& b);

struct HypothesisClassSpec {
  enum class Kind { threshold1d, linear, mlp };
  Kind kind = Kind::linear;
  int hidden = 16;  // mlp only
  int steps = 300;
  int batch_size = 32;
  double lr = 0.1;
};
HypothesisClassSpec::Kind hypothesis_kind_from_string(const std::string& s);

// Proxy A-distance: train a discriminator to separate a-vs-b on a seeded
// 70/30 split and return 2*(1 - 2*held-out error), clamped to [0,2]. The
// discriminator family follows `spec` so the estimate tracks the hypothesis
// class actually in use.
double proxy_hdh_distance(const Tensor& latents_a, const Tensor& latents_b,
                          const HypothesisClassSpec& spec, std::uint64_t seed);

// Upper estimate of the joint optimal risk lambda = eps_a(h*) + eps_b(h*):
// one hypothesis is trained on the union for `budget_steps` and its
// absolute-error (total-variation) risks on the two parts are summed.
// The output layer starts at zero, so budget 0 gives uniform predictions.
double estimate_lambda(const data::LabeledDataset& a, const data::LabeledDataset& b,
                       const HypothesisClassSpec& spec, int budget_steps, std::uint64_t seed);

// sqrt( (4/m) * (d*log(2em/d) + log(4K/delta)) )
double vc_confidence_term(double m, double d, double delta, int K);

struct BoundComponents {
  std::vector<double> empirical_risks;  // eps_hat_{tau_k}(h_k), length K
  std::vector<double> distances;        // d_HdH(D~_k, D~_k'), length K
  std::vector<double> lambdas;          // lambda_k, length K
  double m = 0;                         // sample count (min over clients by default)
  double d = 0;                         // VC surrogate
  double delta = 0.05;
  int K = 0;
};

// (1/K) * sum_k (risk_k + distance_k + lambda_k) + vc_confidence_term(m,d,delta,K)
double theorem1_bound(const BoundComponents& c);

// single-pair version with the K=1 confidence term
double per_pair_lemma1_bound(double emp_risk, double distance, double lambda, double m, double d,
                             double delta);

enum class SampleCountMode { min_m, per_pair };

struct BoundEvalConfig {
  HypothesisClassSpec hypothesis;
  double delta = 0.05;
  int lambda_budget = 300;
  SampleCountMode m_mode = SampleCountMode::min_m;
  std::uint64_t seed = 0;
};

struct BoundRow {
  int client = 0;
  double mean_risk = 0;      // (1/K) sum_k eps_hat_k
  double mean_distance = 0;  // (1/K) sum_k d(k, k')
  double mean_lambda = 0;    // (1/K) sum_k lambda_{k,k'}
  double vc_term = 0;
  double bound = 0;
  double measured_risk = 0;  // risk of the aggregated model on client k'
};

struct BoundReport {
  std::vector<BoundRow> rows;
  double d_surrogate = 0;
  double m_used = 0;
  double delta = 0;
  SampleCountMode m_mode = SampleCountMode::min_m;
  std::vector<std::vector<double>> distance_matrix;
  std::vector<std::vector<double>> lambda_matrix;
};

// End-to-end evaluation over a finished run: latents are taken under the
// aggregated model's representation (the theorem's shared R), hypothesis k
// is client k's predictor on those latents, and d falls back to the
// parameter count of the predictor -- a surrogate, which the report labels.
BoundReport evaluate_theorem1(const std::vector<data::ClientDataset>& clients,
                              const models::ModelParams& global,
                              const std::vector<models::ModelParams>& locals,
                              const BoundEvalConfig& cfg);

// structured text: caveat header plus one line per client with columns
// client, risk, mean_distance, mean_lambda, vc_term, bound, measured_risk
std::string format_report(const BoundReport& report);
void write_report(const BoundReport& report, const std::string& path);

}  // namespace fhs::divergence
