#include <doctest.h>

#include <cmath>
#include <set>

#include "fhs/rng.hpp"

using fhs::Rng;
using fhs::derive_seed;

TEST_SUITE_BEGIN("rng");

TEST_CASE("same seed gives identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.u64() == b.u64());
}

TEST_CASE("derived streams differ by purpose and indices") {
  std::set<std::uint64_t> seen;
  seen.insert(derive_seed(7, "shuffle", 0, 0));
  seen.insert(derive_seed(7, "shuffle", 1, 0));
  seen.insert(derive_seed(7, "shuffle", 0, 1));
  seen.insert(derive_seed(7, "gen", 0, 0));
  seen.insert(derive_seed(8, "shuffle", 0, 0));
  CHECK(seen.size() == 5);
}

TEST_CASE("uniform lies in [0,1)") {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("normal moments") {
  Rng r(3);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.02);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
}

TEST_CASE("dirichlet sums to one and concentrates with small alpha") {
  Rng r(11);
  for (double alpha : {0.01, 1.0, 100.0}) {
    auto p = r.dirichlet(alpha, 10);
    double total = 0;
    for (double v : p) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
  // small alpha: most draws put nearly all mass on one coordinate
  Rng rc(5);
  int peaked = 0;
  for (int i = 0; i < 50; ++i) {
    auto p = rc.dirichlet(0.01, 10);
    double mx = 0;
    for (double v : p) mx = std::max(mx, v);
    if (mx > 0.9) ++peaked;
  }
  CHECK(peaked > 30);
}

TEST_CASE("sample_without_replacement yields distinct indices") {
  Rng r(9);
  auto s = r.sample_without_replacement(20, 8);
  CHECK(s.size() == 8);
  std::set<int> uniq(s.begin(), s.end());
  CHECK(uniq.size() == 8);
  for (int v : s) {
    CHECK(v >= 0);
    CHECK(v < 20);
  }
}

TEST_CASE("gamma is positive with roughly correct mean") {
  Rng r(13);
  for (double shape : {0.3, 1.0, 4.5}) {
    double s = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      double g = r.gamma(shape);
      REQUIRE(g > 0.0);
      s += g;
    }
    CHECK(s / n == doctest::Approx(shape).epsilon(0.05));
  }
}

TEST_SUITE_END();
