#include "fhs/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "fhs/rng.hpp"

namespace fhs::data {

void validate(const LabeledDataset& d) {
  if (d.n_classes < 1) throw std::invalid_argument("dataset: n_classes must be >= 1");
  if (static_cast<int>(d.labels.size()) != d.n())
    throw std::invalid_argument("dataset: label count does not match feature rows");
  for (int y : d.labels)
    if (y < 0 || y >= d.n_classes)
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range");
}

LabeledDataset take(const LabeledDataset& d, const std::vector<int>& indices) {
  LabeledDataset out;
  out.n_classes = d.n_classes;
  const int dim = d.dim();
  out.features = Tensor({static_cast<int>(indices.size()), dim});
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    int i = indices[r];
    if (i < 0 || i >= d.n()) throw std::out_of_range("take: index out of range");
    for (int j = 0; j < dim; ++j) out.features.at(static_cast<int>(r), j) = d.features.at(i, j);
    out.labels.push_back(d.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<long> class_histogram(const LabeledDataset& d) {
  std::vector<long> h(static_cast<std::size_t>(d.n_classes), 0);
  for (int y : d.labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

void validate(const PartitionSpec& spec) {
  if (spec.K < 1) throw std::invalid_argument("partition.K must be >= 1");
  if (!(spec.alpha > 0.0)) throw std::invalid_argument("partition.alpha must be > 0");
  if (!(spec.train_fraction > 0.0) || spec.train_fraction > 1.0)
    throw std::invalid_argument("partition.train_fraction must be in (0,1]");
}

std::vector<ClientDataset> dirichlet_partition(const LabeledDataset& dataset,
                                               const PartitionSpec& spec) {
  validate(spec);
  validate(dataset);
  if (dataset.n() == 0) throw std::invalid_argument("dirichlet_partition: empty dataset");

  LabeledDataset pool =
      subsample_fraction(dataset, spec.train_fraction, derive_seed(spec.seed, "subsample"));
  if (spec.K > pool.n())
    throw std::invalid_argument("dirichlet_partition: K exceeds sample count");

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(pool.n_classes));
  for (int i = 0; i < pool.n(); ++i)
    by_class[static_cast<std::size_t>(pool.labels[static_cast<std::size_t>(i)])].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (by_class[c].empty())
      throw std::invalid_argument("dirichlet_partition: class " + std::to_string(c) +
                                  " has no samples");

  const int max_attempts = 10;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    const std::uint64_t attempt_seed = spec.seed + static_cast<std::uint64_t>(attempt);
    std::vector<std::vector<int>> assigned(static_cast<std::size_t>(spec.K));
    for (int c = 0; c < pool.n_classes; ++c) {
      Rng rng(derive_seed(attempt_seed, "dirichlet", static_cast<std::uint64_t>(c)));
      std::vector<double> p = rng.dirichlet(spec.alpha, spec.K);
      for (int idx : by_class[static_cast<std::size_t>(c)]) {
        double u = rng.uniform();
        double acc = 0.0;
        int k = spec.K - 1;
        for (int j = 0; j < spec.K; ++j) {
          acc += p[static_cast<std::size_t>(j)];
          if (u < acc) {
            k = j;
            break;
          }
        }
        assigned[static_cast<std::size_t>(k)].push_back(idx);
      }
    }
    bool any_empty = false;
    for (const auto& a : assigned)
      if (a.empty()) any_empty = true;
    if (any_empty) continue;

    std::vector<ClientDataset> out(static_cast<std::size_t>(spec.K));
    for (int k = 0; k < spec.K; ++k) {
      auto& cd = out[static_cast<std::size_t>(k)];
      auto& idx = assigned[static_cast<std::size_t>(k)];
      std::sort(idx.begin(), idx.end());
      cd.client_id = k;
      cd.data = take(pool, idx);
      cd.class_histogram = class_histogram(cd.data);
      cd.origin = {spec.alpha, spec.seed, spec.train_fraction};
    }
    return out;
  }
  throw std::runtime_error("dirichlet_partition: a client stayed empty after " +
                           std::to_string(max_attempts) + " attempts");
}

ToyConceptShift make_toy_concept_shift(int n_per_class, std::uint64_t seed) {
  if (n_per_class < 1)
    throw std::invalid_argument("make_toy_concept_shift: n_per_class must be >= 1");
  constexpr int kClients = 3;
  constexpr int kClasses = 2;
  constexpr double kRadius = 3.0;       // orbit of the per-client cluster pair
  constexpr double kClassOffset = 1.5;  // class split, same direction for every client
  const double pi = 3.14159265358979323846;

  // Client k's two blobs sit around R(120k)*(3,0), split along the global
  // y direction. Supports rotate between clients while every local decision
  // boundary stays parallel, so locally trained models conflict in their
  // extrapolations rather than in their labels.
  auto center = [&](int client, int cls) {
    double angle = 2.0 * pi / 3.0 * client;
    double off = cls == 0 ? kClassOffset : -kClassOffset;
    return std::pair<double, double>{kRadius * std::cos(angle),
                                     kRadius * std::sin(angle) + off};
  };
  auto draw_blob = [&](Rng& rng, int client, int cls, int count, Tensor& feat,
                       std::vector<int>& labels, int& row) {
    auto [cx, cy] = center(client, cls);
    for (int i = 0; i < count; ++i) {
      feat.at(row, 0) = cx + rng.normal();
      feat.at(row, 1) = cy + rng.normal();
      labels.push_back(cls);
      ++row;
    }
  };

  ToyConceptShift out;
  out.clients.resize(kClients);
  for (int k = 0; k < kClients; ++k) {
    Rng rng(derive_seed(seed, "toy_client", static_cast<std::uint64_t>(k)));
    LabeledDataset d;
    d.n_classes = kClasses;
    d.features = Tensor({kClasses * n_per_class, 2});
    int row = 0;
    for (int c = 0; c < kClasses; ++c) draw_blob(rng, k, c, n_per_class, d.features, d.labels, row);
    auto& cd = out.clients[static_cast<std::size_t>(k)];
    cd.client_id = k;
    cd.data = std::move(d);
    cd.class_histogram = class_histogram(cd.data);
    cd.origin = {0.0, seed, 1.0};
  }

  // held-out draw across the union of all six blobs
  Rng rng(derive_seed(seed, "toy_test"));
  LabeledDataset t;
  t.n_classes = kClasses;
  t.features = Tensor({kClients * kClasses * n_per_class, 2});
  int row = 0;
  for (int k = 0; k < kClients; ++k)
    for (int c = 0; c < kClasses; ++c) draw_blob(rng, k, c, n_per_class, t.features, t.labels, row);
  out.test = std::move(t);
  return out;
}

LabeledDataset make_gaussian_mixture(int n, int n_classes, int input_dim, double center_scale,
                                     std::uint64_t seed) {
  if (n < 1 || n_classes < 1 || input_dim < 1)
    throw std::invalid_argument("make_gaussian_mixture: bad sizes");
  Rng center_rng(derive_seed(seed, "mixture_centers"));
  std::vector<double> centers(static_cast<std::size_t>(n_classes) *
                              static_cast<std::size_t>(input_dim));
  for (auto& v : centers) v = center_rng.normal(0.0, center_scale);

  Rng rng(derive_seed(seed, "mixture_points"));
  LabeledDataset d;
  d.n_classes = n_classes;
  d.features = Tensor({n, input_dim});
  d.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int c = i % n_classes;  // balanced
    d.labels[static_cast<std::size_t>(i)] = c;
    const double* mu = centers.data() + static_cast<std::size_t>(c) * input_dim;
    for (int j = 0; j < input_dim; ++j) d.features.at(i, j) = mu[j] + rng.normal();
  }
  return d;
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw std::runtime_error("idx: truncated header in " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("idx: cannot open " + images_path);
  if (read_be32(fi, images_path) != kImagesMagic)
    throw std::runtime_error("idx: bad magic in " + images_path);
  const std::uint32_t n = read_be32(fi, images_path);
  const std::uint32_t rows = read_be32(fi, images_path);
  const std::uint32_t cols = read_be32(fi, images_path);
  const std::size_t pixels = static_cast<std::size_t>(n) * rows * cols;
  std::vector<unsigned char> buf(pixels);
  fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
  if (fi.gcount() != static_cast<std::streamsize>(pixels))
    throw std::runtime_error("idx: truncated payload in " + images_path);

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("idx: cannot open " + labels_path);
  if (read_be32(fl, labels_path) != kLabelsMagic)
    throw std::runtime_error("idx: bad magic in " + labels_path);
  const std::uint32_t nl = read_be32(fl, labels_path);
  if (nl != n)
    throw std::runtime_error("idx: count mismatch, " + std::to_string(n) + " images vs " +
                             std::to_string(nl) + " labels");
  std::vector<unsigned char> lab(nl);
  fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(nl));
  if (fl.gcount() != static_cast<std::streamsize>(nl))
    throw std::runtime_error("idx: truncated payload in " + labels_path);

  LabeledDataset d;
  d.features = Tensor({static_cast<int>(n), static_cast<int>(rows * cols)});
  for (std::size_t i = 0; i < pixels; ++i)
    d.features.data[i] = static_cast<double>(buf[i]) / 255.0;
  d.labels.reserve(nl);
  int max_label = 0;
  for (unsigned char y : lab) {
    d.labels.push_back(static_cast<int>(y));
    max_label = std::max(max_label, static_cast<int>(y));
  }
  d.n_classes = max_label + 1;
  return d;
}

void save_idx(const std::string& images_path, const std::string& labels_path,
              const LabeledDataset& d, int rows, int cols) {
  if (rows * cols != d.dim())
    throw std::invalid_argument("save_idx: rows*cols must equal the feature width");
  std::ofstream fi(images_path, std::ios::binary | std::ios::trunc);
  if (!fi) throw std::runtime_error("idx: cannot open " + images_path + " for writing");
  write_be32(fi, kImagesMagic);
  write_be32(fi, static_cast<std::uint32_t>(d.n()));
  write_be32(fi, static_cast<std::uint32_t>(rows));
  write_be32(fi, static_cast<std::uint32_t>(cols));
  for (double v : d.features.data) {
    double scaled = v * 255.0;
    long b = std::lround(scaled);
    if (b < 0 || b > 255 || std::abs(scaled - static_cast<double>(b)) > 1e-9)
      throw std::invalid_argument("save_idx: feature value is not k/255");
    unsigned char byte = static_cast<unsigned char>(b);
    fi.write(reinterpret_cast<char*>(&byte), 1);
  }

  std::ofstream fl(labels_path, std::ios::binary | std::ios::trunc);
  if (!fl) throw std::runtime_error("idx: cannot open " + labels_path + " for writing");
  write_be32(fl, kLabelsMagic);
  write_be32(fl, static_cast<std::uint32_t>(d.n()));
  for (int y : d.labels) {
    if (y < 0 || y > 255) throw std::invalid_argument("save_idx: label does not fit a byte");
    unsigned char byte = static_cast<unsigned char>(y);
    fl.write(reinterpret_cast<char*>(&byte), 1);
  }
}

LabeledDataset subsample_fraction(const LabeledDataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("subsample_fraction: fraction must be in (0,1]");
  if (fraction == 1.0) return d;
  const int n = d.n();
  const int m = static_cast<int>(std::ceil(fraction * n));
  Rng rng(seed);
  auto idx = rng.sample_without_replacement(n, m);
  std::sort(idx.begin(), idx.end());
  return take(d, idx);
}

void export_csv(const LabeledDataset& d, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("export_csv: cannot open " + path);
  f << "label";
  for (int j = 0; j < d.dim(); ++j) f << ",f" << j;
  f << "\n";
  f.precision(std::numeric_limits<double>::max_digits10);
  for (int i = 0; i < d.n(); ++i) {
    f << d.labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < d.dim(); ++j) f << ',' << d.features.at(i, j);
    f << "\n";
  }
}

}  // namespace fhs::data
