#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "fedclust/tasks.hpp"

using namespace fedclust;
using namespace fedclust::tasks;

namespace {

// central finite differences, the reference for every analytic gradient
double fd_gradient(const Model& m, std::vector<double> w, const Dataset& ds,
                   const std::vector<std::uint32_t>& batch, std::size_t k) {
  const double eps = 1e-6;
  std::vector<double> scratch(w.size());
  w[k] += eps;
  const double hi = loss_and_grad(m, w, ds, batch, scratch);
  w[k] -= 2 * eps;
  const double lo = loss_and_grad(m, w, ds, batch, scratch);
  return (hi - lo) / (2 * eps);
}

}  // namespace

TEST_CASE("synthetic data basics") {
  Rng rng = make_stream(1, "t");
  const Dataset ds = gen_synthetic(100, 5, 1, 2.0, rng);
  for (int label : ds.y) REQUIRE(label == 0);

  Rng rng2 = make_stream(1, "t");
  const Dataset again = gen_synthetic(100, 5, 1, 2.0, rng2);
  REQUIRE(ds.x == again.x);

  REQUIRE_THROWS_AS(gen_synthetic(0, 5, 2, 1.0, rng), InvalidParams);
}

TEST_CASE("zero separation is indistinguishable noise") {
  Rng rng = make_stream(2, "t");
  const Dataset ds = gen_synthetic(4000, 4, 2, 0.0, rng);
  // per-class feature means coincide within sampling error
  double mean[2] = {0, 0};
  std::size_t count[2] = {0, 0};
  for (std::size_t i = 0; i < ds.n; ++i) {
    mean[ds.y[i]] += ds.row(i)[0];
    ++count[ds.y[i]];
  }
  const double gap = mean[0] / count[0] - mean[1] / count[1];
  REQUIRE(std::fabs(gap) < 3.0 * std::sqrt(2.0 / 2000.0));
}

TEST_CASE("well separated blobs train to high accuracy centrally") {
  Rng rng = make_stream(3, "t");
  const Dataset ds = gen_synthetic(2000, 10, 2, 6.0, rng);
  Model m{.kind = Model::Kind::logistic, .features = 10, .classes = 2};
  std::vector<double> w(m.dim(), 0.0), grad(m.dim());
  std::vector<std::uint32_t> all(ds.n);
  std::iota(all.begin(), all.end(), 0u);
  for (int step = 0; step < 300; ++step) {
    loss_and_grad(m, w, ds, all, grad);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 0.5 * grad[k];
  }
  const auto [loss, acc] = evaluate(m, w, ds);
  REQUIRE(acc >= 0.99);
  REQUIRE(loss < 0.1);
}

TEST_CASE("iid partition is a disjoint cover") {
  Rng data_rng = make_stream(4, "t"), part_rng = make_stream(5, "t");
  const Dataset ds = gen_synthetic(1003, 3, 4, 1.0, data_rng);
  const auto shards = partition(ds, {.mode = PartitionSpec::Mode::iid}, 10,
                                part_rng);
  std::set<std::uint32_t> seen;
  std::size_t total = 0;
  for (const auto& shard : shards) {
    REQUIRE(!shard.empty());
    total += shard.size();
    seen.insert(shard.begin(), shard.end());
  }
  REQUIRE(total == ds.n);
  REQUIRE(seen.size() == ds.n);  // disjoint

  Rng one_rng = make_stream(6, "t");
  const auto whole = partition(ds, {.mode = PartitionSpec::Mode::iid}, 1,
                               one_rng);
  REQUIRE(whole[0].size() == ds.n);
}

TEST_CASE("noniid shards respect the class budget and size range") {
  Rng data_rng = make_stream(7, "t"), part_rng = make_stream(8, "t");
  const Dataset ds = gen_synthetic(5000, 3, 10, 1.0, data_rng);
  const PartitionSpec spec{.mode = PartitionSpec::Mode::noniid,
                           .min_samples = 30,
                           .max_samples = 50,
                           .classes_per_client = 2};
  const auto shards = partition(ds, spec, 20, part_rng);
  for (const auto& shard : shards) {
    REQUIRE(shard.size() >= 30);
    REQUIRE(shard.size() <= 50);
    std::set<int> labels;
    std::set<std::uint32_t> distinct(shard.begin(), shard.end());
    REQUIRE(distinct.size() == shard.size());
    for (auto idx : shard) labels.insert(ds.y[idx]);
    REQUIRE(labels.size() <= 2);
  }
  PartitionSpec infeasible = spec;
  infeasible.min_samples = infeasible.max_samples = 2000;
  Rng again = make_stream(8, "t");
  REQUIRE_THROWS_AS(partition(ds, infeasible, 3, again), InfeasibleSpec);
}

TEST_CASE("zero-parameter logistic loss is log C") {
  const Dataset ds{4, 2, 2, {1, 2, -1, 0.5, 3, -2, 0, 1}, {0, 1, 0, 1}};
  Model m{.kind = Model::Kind::logistic, .features = 2, .classes = 2};
  std::vector<double> w(m.dim(), 0.0), grad(m.dim());
  const std::vector<std::uint32_t> batch{0, 1, 2, 3};
  REQUIRE(loss_and_grad(m, w, ds, batch, grad) ==
          Catch::Approx(std::log(2.0)));
}

TEST_CASE("duplicated sample equals the single-sample batch") {
  Rng rng = make_stream(9, "t");
  const Dataset ds = gen_synthetic(10, 4, 3, 2.0, rng);
  Model m{.kind = Model::Kind::logistic, .features = 4, .classes = 3};
  std::vector<double> w(m.dim());
  for (auto& v : w) v = standard_normal(rng) * 0.1;
  std::vector<double> g1(m.dim()), g2(m.dim());
  const double l1 = loss_and_grad(m, w, ds, std::vector<std::uint32_t>{3}, g1);
  const double l2 = loss_and_grad(
      m, w, ds, std::vector<std::uint32_t>{3, 3, 3, 3}, g2);
  REQUIRE(l1 == Catch::Approx(l2).epsilon(1e-12));
  for (std::size_t k = 0; k < g1.size(); ++k)
    REQUIRE(g1[k] == Catch::Approx(g2[k]).margin(1e-12));
}

TEST_CASE("gradients match finite differences") {
  Rng rng = make_stream(10, "t");
  const Dataset ds = gen_synthetic(40, 5, 3, 1.5, rng);
  const std::vector<std::uint32_t> batch{0, 5, 7, 11, 20, 33};
  for (auto kind : {Model::Kind::logistic, Model::Kind::mlp}) {
    Model m{.kind = kind, .features = 5, .classes = 3, .hidden = 6};
    std::vector<double> w(m.dim()), grad(m.dim());
    for (auto& v : w) v = standard_normal(rng) * 0.3;
    loss_and_grad(m, w, ds, batch, grad);
    for (int probe = 0; probe < 50; ++probe) {
      const std::size_t k = uniform_below(rng, w.size());
      const double fd = fd_gradient(m, w, ds, batch, k);
      REQUIRE(grad[k] == Catch::Approx(fd).epsilon(1e-5).margin(1e-8));
    }
  }
}

TEST_CASE("regularized logistic loss is convex along random chords") {
  Rng rng = make_stream(11, "t");
  const Dataset ds = gen_synthetic(30, 4, 2, 1.0, rng);
  Model m{.kind = Model::Kind::logistic, .features = 4, .classes = 2};
  const std::vector<std::uint32_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<double> grad(m.dim());
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> w1(m.dim()), w2(m.dim()), mix(m.dim());
    for (auto& v : w1) v = standard_normal(rng);
    for (auto& v : w2) v = standard_normal(rng);
    const double lambda = uniform01(rng);
    for (std::size_t k = 0; k < mix.size(); ++k)
      mix[k] = lambda * w1[k] + (1 - lambda) * w2[k];
    const double f1 = loss_and_grad(m, w1, ds, batch, grad);
    const double f2 = loss_and_grad(m, w2, ds, batch, grad);
    const double fm = loss_and_grad(m, mix, ds, batch, grad);
    REQUIRE(fm <= lambda * f1 + (1 - lambda) * f2 + 1e-9);
  }
}

TEST_CASE("evaluation ties predict class zero") {
  const Dataset ds{3, 1, 2, {1.0, 2.0, 3.0}, {0, 0, 1}};
  Model m{.kind = Model::Kind::logistic, .features = 1, .classes = 2};
  const std::vector<double> w(m.dim(), 0.0);
  const auto [loss, acc] = evaluate(m, w, ds);
  REQUIRE(acc == Catch::Approx(2.0 / 3.0));  // majority class fraction
  REQUIRE(loss == Catch::Approx(std::log(2.0)));
}

TEST_CASE("evaluation agrees with a hand confusion count") {
  Rng rng = make_stream(12, "t");
  const Dataset ds = gen_synthetic(100, 3, 2, 2.0, rng);
  Model m{.kind = Model::Kind::logistic, .features = 3, .classes = 2};
  std::vector<double> w(m.dim());
  for (auto& v : w) v = standard_normal(rng) * 0.5;
  const auto [loss, acc] = evaluate(m, w, ds);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    const auto x = ds.row(i);
    double s0 = w[3], s1 = w[7];
    for (std::size_t j = 0; j < 3; ++j) {
      s0 += w[j] * x[j];
      s1 += w[4 + j] * x[j];
    }
    const int pred = s1 > s0 ? 1 : 0;
    if (pred == ds.y[i]) ++correct;
  }
  REQUIRE(acc == Catch::Approx(static_cast<double>(correct) / ds.n));
}

TEST_CASE("csv loader round trip") {
  const char* path = "fedclust_test_dataset.csv";
  {
    std::ofstream out(path);
    out << "f0,label,f1\n";
    out << "0.5,1,-2.25\n";
    out << "1.5,0,3.0\n";
  }
  const Dataset ds = load_csv(path);
  REQUIRE(ds.n == 2);
  REQUIRE(ds.f == 2);
  REQUIRE(ds.c == 2);
  REQUIRE(ds.y == std::vector<int>{1, 0});
  REQUIRE(ds.x == std::vector<double>{0.5, -2.25, 1.5, 3.0});
  std::remove(path);
  REQUIRE_THROWS_AS(load_csv("no_such_file.csv"), InvalidParams);
}
