#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fhs/datasets.hpp"
#include "fhs/rng.hpp"

using namespace fhs;
using namespace fhs::data;

TEST_SUITE_BEGIN("datasets");

namespace {

LabeledDataset balanced_set(int n, int n_classes, std::uint64_t seed) {
  return make_gaussian_mixture(n, n_classes, 4, 3.0, seed);
}

double mean_label_entropy(const std::vector<ClientDataset>& clients) {
  double total = 0;
  for (const auto& c : clients) {
    double n = static_cast<double>(c.data.n());
    double h = 0;
    for (long cnt : c.class_histogram) {
      if (cnt == 0) continue;
      double p = static_cast<double>(cnt) / n;
      h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(clients.size());
}

std::filesystem::path temp_dir() {
  auto d = std::filesystem::temp_directory_path() / "fhs_data_test";
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("K=1 partition owns the whole subsampled dataset") {
  auto d = balanced_set(200, 4, 1);
  auto clients = dirichlet_partition(d, PartitionSpec{1, 0.5, 1.0, 7});
  REQUIRE(clients.size() == 1);
  CHECK(clients[0].data.n() == 200);
  long total = 0;
  for (long c : clients[0].class_histogram) total += c;
  CHECK(total == 200);
}

TEST_CASE("partition is disjoint and exhaustive") {
  auto d = balanced_set(500, 5, 2);
  // tag each sample with a unique feature value so rows are identifiable
  for (int i = 0; i < d.n(); ++i) d.features.at(i, 0) = i;
  auto clients = dirichlet_partition(d, PartitionSpec{7, 0.3, 1.0, 11});
  std::multiset<int> seen;
  for (const auto& c : clients) {
    CHECK(c.data.n() > 0);
    long total = 0;
    for (long cnt : c.class_histogram) total += cnt;
    CHECK(total == c.data.n());
    for (int i = 0; i < c.data.n(); ++i)
      seen.insert(static_cast<int>(c.data.features.at(i, 0)));
  }
  REQUIRE(seen.size() == 500);  // exhaustive
  std::set<int> uniq(seen.begin(), seen.end());
  CHECK(uniq.size() == 500);  // disjoint
}

TEST_CASE("alpha controls per-client label entropy") {
  auto d = balanced_set(10000, 10, 3);
  auto skewed = dirichlet_partition(d, PartitionSpec{10, 0.01, 1.0, 0});
  auto mixed = dirichlet_partition(d, PartitionSpec{10, 100.0, 1.0, 7});
  CHECK(mean_label_entropy(skewed) < 1.0);
  CHECK(mean_label_entropy(mixed) > 2.0);
}

TEST_CASE("empty-client guard gives up after ten retries") {
  // at alpha=0.01 most draws are near one-hot; this seed leaves some client
  // empty on all ten attempts
  auto d = balanced_set(10000, 10, 3);
  CHECK_THROWS_WITH_AS(dirichlet_partition(d, PartitionSpec{10, 0.01, 1.0, 6}),
                       doctest::Contains("empty"), std::runtime_error);
}

TEST_CASE("heterogeneity decreases monotonically in alpha on average") {
  auto d = balanced_set(2000, 10, 4);
  auto global_hist = class_histogram(d);
  const double n_global = static_cast<double>(d.n());

  auto max_tv = [&](const std::vector<ClientDataset>& clients) {
    double worst = 0;
    for (const auto& c : clients) {
      double tv = 0;
      for (int y = 0; y < d.n_classes; ++y) {
        double pc = static_cast<double>(c.class_histogram[static_cast<std::size_t>(y)]) /
                    static_cast<double>(c.data.n());
        double pg = static_cast<double>(global_hist[static_cast<std::size_t>(y)]) / n_global;
        tv += std::abs(pc - pg);
      }
      worst = std::max(worst, 0.5 * tv);
    }
    return worst;
  };

  const double alphas[] = {0.1, 1.0, 10.0, 100.0};
  double means[4] = {};
  for (int a = 0; a < 4; ++a) {
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      means[a] += max_tv(dirichlet_partition(d, PartitionSpec{10, alphas[a], 1.0, seed}));
    means[a] /= 20.0;
  }
  CHECK(means[0] > means[1]);
  CHECK(means[1] > means[2]);
  CHECK(means[2] > means[3]);
}

TEST_CASE("partition input validation") {
  auto d = balanced_set(50, 2, 5);
  CHECK_THROWS_AS(dirichlet_partition(d, PartitionSpec{2, -1.0, 1.0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_partition(d, PartitionSpec{100, 1.0, 1.0, 0}), std::invalid_argument);
  LabeledDataset empty;
  empty.n_classes = 2;
  empty.features = Tensor({0, 3});
  CHECK_THROWS_AS(dirichlet_partition(empty, PartitionSpec{1, 1.0, 1.0, 0}), std::invalid_argument);
}

TEST_CASE("toy concept shift construction") {
  auto toy = make_toy_concept_shift(40, 9);
  REQUIRE(toy.clients.size() == 3);
  for (const auto& c : toy.clients) {
    CHECK(c.data.n() == 80);
    CHECK(c.class_histogram == std::vector<long>{40, 40});
  }
  CHECK(toy.test.n() == 240);

  // same seed reproduces the datasets exactly
  auto again = make_toy_concept_shift(40, 9);
  for (int k = 0; k < 3; ++k) {
    CHECK(again.clients[k].data.features.data == toy.clients[k].data.features.data);
    CHECK(again.clients[k].data.labels == toy.clients[k].data.labels);
  }
  CHECK(again.test.features.data == toy.test.features.data);
}

TEST_CASE("toy per-class means differ across clients by more than 2") {
  auto toy = make_toy_concept_shift(150, 0);
  auto class_mean = [&](const ClientDataset& c, int cls) {
    double sx = 0, sy = 0;
    int count = 0;
    for (int i = 0; i < c.data.n(); ++i) {
      if (c.data.labels[static_cast<std::size_t>(i)] != cls) continue;
      sx += c.data.features.at(i, 0);
      sy += c.data.features.at(i, 1);
      ++count;
    }
    return std::pair{sx / count, sy / count};
  };
  for (int cls = 0; cls < 2; ++cls) {
    auto [x0, y0] = class_mean(toy.clients[0], cls);
    auto [x1, y1] = class_mean(toy.clients[1], cls);
    double dist = std::hypot(x0 - x1, y0 - y1);
    CHECK(dist > 2.0);
  }
}

TEST_CASE("idx round-trips a handcrafted two-image blob") {
  auto dir = temp_dir();
  auto img = (dir / "two.images").string();
  auto lab = (dir / "two.labels").string();
  {
    // 2 images of 2x2 pixels, by hand per the IDX layout
    std::ofstream f(img, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                   0, 64, 128, 255, 1, 2, 3, 4};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  {
    std::ofstream f(lab, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  auto d = load_idx(img, lab);
  CHECK(d.features.shape == std::vector<int>{2, 4});
  CHECK(d.features.at(0, 0) == 0.0);
  CHECK(d.features.at(0, 3) == 1.0);  // pixel 255 -> 1.0
  CHECK(d.features.at(0, 2) == doctest::Approx(128.0 / 255.0));
  CHECK(d.labels == std::vector<int>{7, 3});
  CHECK(d.n_classes == 8);

  // write-then-read is bitwise identical
  auto img2 = (dir / "rt.images").string();
  auto lab2 = (dir / "rt.labels").string();
  save_idx(img2, lab2, d, 2, 2);
  auto d2 = load_idx(img2, lab2);
  CHECK(d2.features.data == d.features.data);
  CHECK(d2.labels == d.labels);
}

TEST_CASE("idx rejects corrupt files") {
  auto dir = temp_dir();
  auto img = (dir / "bad.images").string();
  auto lab = (dir / "ok.labels").string();
  {
    std::ofstream f(img, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  {
    std::ofstream f(lab, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 1, 0};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  CHECK_THROWS_WITH_AS(load_idx(img, lab), doctest::Contains("bad magic"), std::runtime_error);

  // count mismatch: 3 images vs 2 labels
  auto img3 = (dir / "three.images").string();
  auto lab2 = (dir / "two2.labels").string();
  {
    std::ofstream f(img3, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 1, 10, 20, 30};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  {
    std::ofstream f(lab2, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 2, 1, 0};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  CHECK_THROWS_WITH_AS(load_idx(img3, lab2), doctest::Contains("count mismatch"),
                       std::runtime_error);

  // truncated payload: header promises 4 pixels, file has 2
  auto imgt = (dir / "trunc.images").string();
  {
    std::ofstream f(imgt, std::ios::binary);
    const unsigned char bytes[] = {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 5, 6};
    f.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  CHECK_THROWS_WITH_AS(load_idx(imgt, lab2), doctest::Contains("truncated"), std::runtime_error);
}

TEST_CASE("subsample_fraction") {
  auto d = balanced_set(100, 4, 6);
  SUBCASE("fraction 1 is the identity") {
    auto s = subsample_fraction(d, 1.0, 3);
    CHECK(s.features.data == d.features.data);
    CHECK(s.labels == d.labels);
  }
  SUBCASE("half of 100 is 50") {
    auto s = subsample_fraction(d, 0.5, 3);
    CHECK(s.n() == 50);
  }
  SUBCASE("same seed, same index set") {
    auto a = subsample_fraction(d, 0.3, 9);
    auto b = subsample_fraction(d, 0.3, 9);
    CHECK(a.features.data == b.features.data);
    CHECK(a.labels == b.labels);
  }
  SUBCASE("fraction out of range") {
    CHECK_THROWS_AS(subsample_fraction(d, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(subsample_fraction(d, 1.5, 1), std::invalid_argument);
  }
}

TEST_CASE("csv export writes the documented header") {
  auto dir = temp_dir();
  LabeledDataset d;
  d.n_classes = 2;
  d.features = Tensor::matrix(2, 2, {0.5, 1.5, -1.0, 2.0});
  d.labels = {1, 0};
  auto path = (dir / "out.csv").string();
  export_csv(d, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "label,f0,f1");
  std::getline(f, line);
  CHECK(line.substr(0, 2) == "1,");
}

TEST_CASE("access audit counter increments through training_view") {
  auto toy = make_toy_concept_shift(5, 1);
  const auto& c = toy.clients[0];
  CHECK(c.access_count() == 0);
  (void)c.training_view();
  (void)c.training_view();
  CHECK(c.access_count() == 2);
}

TEST_SUITE_END();
