#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fhs/tensor.hpp"

namespace fhs::data {

struct LabeledDataset {
  Tensor features;          // [n x input_dim]
  std::vector<int> labels;  // values in [0, n_classes)
  int n_classes = 0;

  int n() const { return features.data.empty() ? 0 : features.rows(); }
  int dim() const { return features.data.empty() ? 0 : features.cols(); }
};

// throws if labels/features disagree or a label is out of range
void validate(const LabeledDataset& d);

LabeledDataset take(const LabeledDataset& d, const std::vector<int>& indices);
std::vector<long> class_histogram(const LabeledDataset& d);

struct PartitionOrigin {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;
};

// One client's private shard. Training code must reach the samples through
// training_view(); the access counter lets tests audit that only the owner
// touched them during a round.
struct ClientDataset {
  int client_id = 0;
  LabeledDataset data;
  std::vector<long> class_histogram;
  PartitionOrigin origin;

  const LabeledDataset& training_view() const {
    ++accesses_;
    return data;
  }
  long access_count() const { return accesses_; }

 private:
  mutable long accesses_ = 0;
};

struct PartitionSpec {
  int K = 1;
  double alpha = 1.0;
  double train_fraction = 1.0;
  std::uint64_t seed = 0;
};
void validate(const PartitionSpec& spec);

// Label-skew partitioning: for every class, client proportions are drawn
// from Dirichlet(alpha * 1_K) and the class's samples are assigned
// multinomially. Partitions are disjoint and exhaustive over the subsampled
// train_fraction. If some client ends up empty the draw is retried with
// seed+1 (up to 10 times) before giving up.
std::vector<ClientDataset> dirichlet_partition(const LabeledDataset& dataset,
                                               const PartitionSpec& spec);

// Three clients, two classes each, same class counts but shifted support:
// each client's pair of Gaussian blobs (unit covariance) orbits the origin
// at radius 3, rotated 120 degrees between clients, with the class split
// along a shared direction. The test set is a fresh held-out draw from the
// union of all six blobs.
struct ToyConceptShift {
  std::vector<ClientDataset> clients;
  LabeledDataset test;
};
ToyConceptShift make_toy_concept_shift(int n_per_class, std::uint64_t seed);

// Balanced Gaussian blobs: class centers ~ N(0, center_scale^2 I) in
// input_dim dimensions, unit covariance around each center. Stand-in for
// image data when IDX files are not available.
LabeledDataset make_gaussian_mixture(int n, int n_classes, int input_dim, double center_scale,
                                     std::uint64_t seed);

// IDX ingestion (big-endian header, unsigned-byte payload). Pixels are
// scaled to [0,1]; images are flattened row-major to [n x rows*cols].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);
// Inverse of load_idx for byte-valued data; feature values must be k/255.
void save_idx(const std::string& images_path, const std::string& labels_path,
              const LabeledDataset& d, int rows, int cols);

// uniform sample without replacement of ceil(fraction*n) items; the chosen
// rows keep their original relative order, so fraction=1 is the identity
LabeledDataset subsample_fraction(const LabeledDataset& d, double fraction, std::uint64_t seed);

// header "label,f0,f1,...", one row per sample
void export_csv(const LabeledDataset& d, const std::string& path);

}  // namespace fhs::data
