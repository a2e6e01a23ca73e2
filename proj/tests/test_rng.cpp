#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedclust/rng.hpp"

using namespace fedclust;

TEST_CASE("streams are deterministic and independent") {
  Rng a = make_stream(42, "batch", 3);
  Rng b = make_stream(42, "batch", 3);
  REQUIRE(a() == b());
  REQUIRE(a() == b());

  Rng c = make_stream(42, "batch", 4);
  Rng d = make_stream(42, "codec", 3);
  Rng e = make_stream(43, "batch", 3);
  REQUIRE(a() != c());
  REQUIRE(a() != d());
  REQUIRE(a() != e());
}

TEST_CASE("uniform01 stays in [0,1)") {
  Rng rng = make_stream(7, "u");
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(rng);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("uniform_below covers the range") {
  Rng rng = make_stream(7, "ub");
  int seen[5] = {0};
  for (int i = 0; i < 5000; ++i) {
    const auto v = uniform_below(rng, 5);
    REQUIRE(v < 5);
    ++seen[v];
  }
  for (int count : seen) REQUIRE(count > 800);
}

TEST_CASE("standard_normal has the right first two moments") {
  Rng rng = make_stream(11, "n");
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = standard_normal(rng);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  REQUIRE(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  REQUIRE(std::fabs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
}
