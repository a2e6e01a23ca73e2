#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "fedclust/codec.hpp"
#include "fedclust/payload.hpp"

using namespace fedclust;
using namespace fedclust::codec;

namespace {

std::vector<double> normal_vector(std::size_t d, std::uint64_t seed) {
  Rng rng = make_stream(seed, "test.data");
  std::vector<double> u(d);
  for (auto& v : u) v = standard_normal(rng);
  return u;
}

}  // namespace

TEST_CASE("dense codec is an exact passthrough") {
  Rng rng = make_stream(1, "c");
  const std::vector<double> u{1.0, 2.0};
  const auto c = compress({.kind = Codec::dense}, u, rng);
  REQUIRE(decompress(c) == u);
}

TEST_CASE("decompress handles each payload shape") {
  const MucscPayload m{Codebook{{0.0, 3.0}}, {0, 1, 1}};
  REQUIRE(decompress(m) == std::vector<double>{0, 3, 3});

  const StcPayload s{4, {1, 3}, {0, 1}, 0.5};
  REQUIRE(decompress(s) == std::vector<double>{0, 0.5, 0, -0.5});

  const DensePayload dn{{1.0, 2.0}};
  REQUIRE(decompress(dn) == std::vector<double>{1, 2});

  const BmucscPayload b{6, {1, 4}, {0, 1}, Codebook{{-1.0, 2.0}}, 0.25};
  REQUIRE(decompress(b) ==
          std::vector<double>{0.25, -1.0, 0.25, 0.25, 2.0, 0.25});

  const QsgdPayload q{2, 4, 5.0, {9, 12}, {0, 1}};
  REQUIRE(decompress(q) == std::vector<double>{3.0, -4.0});

  const SignPayload sg{3, {0, 1, 0}, 0.5};
  REQUIRE(decompress(sg) == std::vector<double>{0.5, -0.5, 0.5});

  const DgcPayload g{4, {0, 2}, {1.5, -2.0}};
  REQUIRE(decompress(g) == std::vector<double>{1.5, 0, -2.0, 0});
}

TEST_CASE("decompress rejects malformed payloads") {
  REQUIRE_THROWS_AS(decompress(MucscPayload{Codebook{{0.0, 3.0}}, {0, 2}}),
                    MalformedPayload);
  REQUIRE_THROWS_AS(decompress(StcPayload{4, {3, 1}, {0, 0}, 0.5}),
                    MalformedPayload);
  REQUIRE_THROWS_AS(decompress(DgcPayload{4, {5}, {1.0}}), MalformedPayload);
}

TEST_CASE("residual codecs demand a residual and matching dimension") {
  Rng rng = make_stream(2, "c");
  const std::vector<double> u{1.0, -2.0};
  REQUIRE_THROWS_AS(compress({.kind = Codec::stc}, u, rng), MissingResidual);
  REQUIRE_THROWS_AS(compress({.kind = Codec::dgc}, u, rng), MissingResidual);
  ResidualState bad(3);
  REQUIRE_THROWS_AS(compress({.kind = Codec::dgc}, u, rng, &bad),
                    DimensionMismatch);
  REQUIRE_THROWS_AS(
      compress({.kind = Codec::dense}, std::vector<double>{std::nan("")}, rng),
      NonFiniteInput);
}

TEST_CASE("dgc keeps the largest residual entry and zeroes it") {
  Rng rng = make_stream(3, "c");
  // f32-exact values so the error-feedback bookkeeping is exact
  std::vector<double> u{0.5, -1.0, 0.25, 6.0, 2.0, -0.75, 1.5, 0.125, -3.0, 1.0};
  ResidualState r(u.size());
  const auto c = compress({.kind = Codec::dgc, .dgc_fraction = 0.1}, u, rng, &r);
  const auto& p = std::get<DgcPayload>(c);
  REQUIRE(p.indices == std::vector<std::uint32_t>{3});
  REQUIRE(p.values == std::vector<double>{6.0});
  std::vector<double> expected = u;
  expected[3] = 0.0;
  REQUIRE(r.residual == expected);
}

TEST_CASE("top-k ties break toward the lower index") {
  Rng rng = make_stream(4, "c");
  std::vector<double> u{1.0, -1.0, 1.0, 0.5};
  ResidualState r(u.size());
  const auto c = compress({.kind = Codec::dgc, .dgc_fraction = 0.5}, u, rng, &r);
  REQUIRE(std::get<DgcPayload>(c).indices == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("qsgd reproduces grid-exact values deterministically") {
  const CodecConfig cfg{.kind = Codec::qsgd, .qsgd_bits = 4};
  const std::vector<double> u{3.0, -4.0};  // norm 5; |u|/norm lands on grid
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = make_stream(seed, "c");
    REQUIRE(decompress(compress(cfg, u, rng)) == u);
  }
}

TEST_CASE("qsgd levels fit the bit width and zero vector is safe") {
  Rng rng = make_stream(5, "c");
  const auto u = normal_vector(100, 5);
  const auto p = std::get<QsgdPayload>(
      compress({.kind = Codec::qsgd, .qsgd_bits = 2}, u, rng));
  for (auto level : p.levels) REQUIRE(level <= 3u);

  const std::vector<double> zeros(8, 0.0);
  const auto z = compress({.kind = Codec::qsgd}, zeros, rng);
  REQUIRE(decompress(z) == zeros);
}

TEST_CASE("signsgd transmits signs with the mean magnitude") {
  Rng rng = make_stream(6, "c");
  const std::vector<double> u{1.0, -3.0, 2.0, 0.0};
  const auto p = std::get<SignPayload>(compress({.kind = Codec::signsgd}, u, rng));
  REQUIRE(p.scale == 1.5);
  REQUIRE(p.negative == std::vector<std::uint8_t>{0, 1, 0, 0});
}

TEST_CASE("bmucsc separates the heavy hitters from the rest mean") {
  Rng rng = make_stream(7, "c");
  std::vector<double> u{0.5, 8.0, 0.25, -6.0, 0.75, 0.5, 1.0, 0.25};
  const CodecConfig cfg{
      .kind = Codec::bmucsc, .em = {.z = 2}, .bmucsc_fraction = 0.25};
  const auto c = compress(cfg, u, rng);
  const auto& p = std::get<BmucscPayload>(c);
  REQUIRE(p.indices == std::vector<std::uint32_t>{1, 3});
  REQUIRE(p.codebook.centroids == std::vector<double>{-6.0, 8.0});
  const double rest = (0.5 + 0.25 + 0.75 + 0.5 + 1.0 + 0.25) / 6.0;
  REQUIRE(p.rest_mean == Catch::Approx(rest));
  const auto dec = decompress(c);
  REQUIRE(dec[1] == 8.0);
  REQUIRE(dec[3] == -6.0);
  for (std::size_t m : {0u, 2u, 4u, 5u, 6u, 7u})
    REQUIRE(dec[m] == Catch::Approx(rest));
}

TEST_CASE("bmucsc keeps everything when the fraction selects all") {
  Rng rng = make_stream(8, "c");
  std::vector<double> u{1.0, -2.0};
  const CodecConfig cfg{
      .kind = Codec::bmucsc, .em = {.z = 2}, .bmucsc_fraction = 1.0};
  const auto p = std::get<BmucscPayload>(compress(cfg, u, rng));
  REQUIRE(p.indices.size() == 2);
  REQUIRE(p.rest_mean == 0.0);
}

TEST_CASE("compression is deterministic per seed") {
  const auto u = normal_vector(300, 9);
  for (Codec kind : {Codec::mucsc, Codec::bmucsc, Codec::qsgd, Codec::stc,
                     Codec::dgc, Codec::signsgd}) {
    CodecConfig cfg{.kind = kind};
    cfg.em.z = kind == Codec::bmucsc ? 4 : 16;
    Rng r1 = make_stream(10, "c"), r2 = make_stream(10, "c");
    ResidualState s1(u.size()), s2(u.size());
    const auto c1 = compress(cfg, u, r1, &s1);
    const auto c2 = compress(cfg, u, r2, &s2);
    REQUIRE(payload::encode(c1) == payload::encode(c2));
    REQUIRE(s1.residual == s2.residual);
  }
}

TEST_CASE("error feedback telescopes exactly over many rounds") {
  for (Codec kind : {Codec::stc, Codec::dgc}) {
    CodecConfig cfg{.kind = kind, .stc_fraction = 0.10, .dgc_fraction = 0.10};
    const std::size_t d = 50;
    ResidualState state(d);
    std::vector<double> replayed(d, 0.0);
    for (std::uint64_t step = 0; step < 10; ++step) {
      const auto u = normal_vector(d, 100 + step);
      Rng rng = make_stream(11, "c", step);
      const auto c = compress(cfg, u, rng, &state);
      const auto dec = decompress(c);
      REQUIRE(std::count_if(dec.begin(), dec.end(),
                            [](double v) { return v != 0.0; }) <= 5);
      for (std::size_t m = 0; m < d; ++m)
        replayed[m] = (replayed[m] + u[m]) - dec[m];
    }
    REQUIRE(state.residual == replayed);
  }
}

TEST_CASE("mucsc decoded mean is unbiased coordinate-wise") {
  const std::size_t d = 200;
  const int n = 20000;
  for (int z : {2, 4, 16}) {
    const auto u = normal_vector(d, 12 + z);
    Rng rng = make_stream(13, "c", z);
    const CodecConfig cfg{.kind = Codec::mucsc, .em = {.z = z}};

    // one fit is enough: freeze the codebook, redraw only the assignment
    const auto first = std::get<MucscPayload>(compress(cfg, u, rng));
    const Codebook& cb = first.codebook;
    std::vector<double> sum(d, 0.0);
    for (int it = 0; it < n; ++it) {
      const auto ids = quantize_stochastic(cb, u, rng);
      for (std::size_t m = 0; m < d; ++m) sum[m] += cb.centroids[ids[m]];
    }

    std::size_t outside = 0;
    for (std::size_t m = 0; m < d; ++m) {
      const int cell = cb.cell(u[m]);
      const double var =
          (cb.centroids[cell + 1] - u[m]) * (u[m] - cb.centroids[cell]);
      const double se = std::sqrt(std::max(var, 0.0) / n);
      const double err = std::fabs(sum[m] / n - u[m]);
      REQUIRE(err <= std::max(6.0 * se, 1e-12));
      if (err > 3.0 * se) ++outside;
    }
    // ~0.27% of coordinates should exceed 3 standard errors by chance
    REQUIRE(outside <= d / 50);
  }
}

TEST_CASE("mucsc per-element variance matches the product form") {
  const std::size_t d = 300;
  const int n = 30000;
  const auto u = normal_vector(d, 21);
  Rng rng = make_stream(22, "c");
  const CodecConfig cfg{.kind = Codec::mucsc, .em = {.z = 16}};
  const auto first = std::get<MucscPayload>(compress(cfg, u, rng));
  const Codebook& cb = first.codebook;

  std::vector<double> sum(d, 0.0), sq(d, 0.0);
  for (int it = 0; it < n; ++it) {
    const auto ids = quantize_stochastic(cb, u, rng);
    for (std::size_t m = 0; m < d; ++m) {
      const double err = cb.centroids[ids[m]] - u[m];
      sum[m] += err;
      sq[m] += err * err;
    }
  }
  std::size_t eligible = 0;
  for (std::size_t m = 0; m < d; ++m) {
    const int cell = cb.cell(u[m]);
    const double left = cb.centroids[cell], right = cb.centroids[cell + 1];
    const double width = right - left;
    if (u[m] - left < 0.1 * width || right - u[m] < 0.1 * width) continue;
    ++eligible;
    const double expected = (right - u[m]) * (u[m] - left);
    const double mean = sum[m] / n;
    const double var = sq[m] / n - mean * mean;
    REQUIRE(var == Catch::Approx(expected).epsilon(0.10));
  }
  REQUIRE(eligible > d / 2);
}

TEST_CASE("qsgd decoded mean is unbiased coordinate-wise") {
  const std::size_t d = 200;
  const int n = 20000;
  const auto u = normal_vector(d, 23);
  const CodecConfig cfg{.kind = Codec::qsgd, .qsgd_bits = 4};
  Rng rng = make_stream(24, "c");
  std::vector<double> sum(d, 0.0);
  double norm = 0.0;
  for (int it = 0; it < n; ++it) {
    const auto c = compress(cfg, u, rng);
    const auto dec = decompress(c);
    norm = std::get<QsgdPayload>(c).norm;
    for (std::size_t m = 0; m < d; ++m) sum[m] += dec[m];
  }
  const double s = 15.0;
  std::size_t outside = 0;
  for (std::size_t m = 0; m < d; ++m) {
    const double pos = std::fabs(u[m]) / norm * s;
    const double q = pos - std::floor(pos);
    const double se = (norm / s) * std::sqrt(q * (1 - q) / n);
    const double err = std::fabs(sum[m] / n - u[m]);
    REQUIRE(err <= std::max(6.0 * se, 1e-9));
    if (err > 3.0 * se) ++outside;
  }
  REQUIRE(outside <= d / 50);
}

TEST_CASE("bmucsc is unbiased on the selected coordinates") {
  const std::size_t d = 100;
  const int n = 20000;
  const auto u = normal_vector(d, 25);
  const CodecConfig cfg{
      .kind = Codec::bmucsc, .em = {.z = 4}, .bmucsc_fraction = 0.2};
  Rng rng = make_stream(26, "c");
  const auto first = std::get<BmucscPayload>(compress(cfg, u, rng));
  std::vector<double> sum(first.indices.size(), 0.0);
  for (int it = 0; it < n; ++it) {
    const auto p = std::get<BmucscPayload>(compress(cfg, u, rng));
    for (std::size_t j = 0; j < p.indices.size(); ++j)
      sum[j] += p.codebook.centroids[p.cluster_ids[j]];
  }
  for (std::size_t j = 0; j < first.indices.size(); ++j) {
    const double x = u[first.indices[j]];
    const int cell = first.codebook.cell(x);
    const double var = (first.codebook.centroids[cell + 1] - x) *
                       (x - first.codebook.centroids[cell]);
    const double se = std::sqrt(std::max(var, 1e-30) / n);
    REQUIRE(std::fabs(sum[j] / n - x) <= std::max(6.0 * se, 1e-9));
  }
}
