#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedclust/errors.hpp"
#include "fedclust/rng.hpp"

namespace fedclust::tasks {

struct Dataset {
  std::size_t n = 0;              // samples
  std::size_t f = 0;              // features
  std::size_t c = 0;              // classes
  std::vector<double> x;          // row-major n x f
  std::vector<int> y;             // labels in [0, c)

  std::span<const double> row(std::size_t i) const {
    return {x.data() + i * f, f};
  }
};

/// Gaussian-blob classification data: class c is a unit-variance blob whose
/// mean sits at `separation` along axis c mod f. Labels cycle round-robin so
/// classes stay balanced.
inline Dataset gen_synthetic(std::size_t n, std::size_t f, std::size_t c,
                             double separation, Rng& rng) {
  if (n < 1 || f < 1 || c < 1) throw InvalidParams("n, f, c >= 1 required");
  if (!std::isfinite(separation) || separation < 0)
    throw InvalidParams("separation must be finite and >= 0");
  Dataset ds;
  ds.n = n;
  ds.f = f;
  ds.c = c;
  ds.x.resize(n * f);
  ds.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % c);
    ds.y[i] = label;
    double* row = ds.x.data() + i * f;
    for (std::size_t j = 0; j < f; ++j) row[j] = standard_normal(rng);
    row[static_cast<std::size_t>(label) % f] += separation;
  }
  return ds;
}

struct PartitionSpec {
  enum class Mode { iid, noniid };
  Mode mode = Mode::iid;
  int min_samples = 300;       // noniid shard size range
  int max_samples = 500;
  int classes_per_client = 5;  // noniid label restriction
};

namespace detail {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

}  // namespace detail

/// Splits a dataset into per-client shards of sample indices.
///
/// iid: a disjoint uniform split into near-equal shards. noniid: each client
/// first draws `classes_per_client` classes, then a shard size uniform in
/// [min_samples, max_samples], then that many distinct samples from those
/// classes only (clients may overlap).
inline std::vector<std::vector<std::uint32_t>> partition(
    const Dataset& ds, const PartitionSpec& spec, int n_clients, Rng& rng) {
  if (n_clients < 1) throw InvalidParams("n_clients >= 1 required");
  std::vector<std::vector<std::uint32_t>> shards(n_clients);

  if (spec.mode == PartitionSpec::Mode::iid) {
    if (ds.n < static_cast<std::size_t>(n_clients))
      throw InfeasibleSpec("fewer samples than clients");
    std::vector<std::uint32_t> order(ds.n);
    std::iota(order.begin(), order.end(), 0u);
    detail::shuffle(order, rng);
    for (std::size_t i = 0; i < ds.n; ++i)
      shards[i % n_clients].push_back(order[i]);
    return shards;
  }

  if (spec.min_samples < 1 || spec.max_samples < spec.min_samples)
    throw InvalidParams("bad noniid shard size range");
  if (spec.classes_per_client < 1 ||
      spec.classes_per_client > static_cast<int>(ds.c))
    throw InvalidParams("classes_per_client out of range");

  std::vector<std::vector<std::uint32_t>> by_class(ds.c);
  for (std::size_t i = 0; i < ds.n; ++i)
    by_class[ds.y[i]].push_back(static_cast<std::uint32_t>(i));

  for (auto& shard : shards) {
    std::vector<std::uint32_t> classes(ds.c);
    std::iota(classes.begin(), classes.end(), 0u);
    detail::shuffle(classes, rng);
    classes.resize(spec.classes_per_client);
    std::sort(classes.begin(), classes.end());

    std::vector<std::uint32_t> pool;
    for (std::uint32_t cl : classes)
      pool.insert(pool.end(), by_class[cl].begin(), by_class[cl].end());
    const std::size_t want =
        spec.min_samples +
        uniform_below(rng, static_cast<std::uint64_t>(spec.max_samples -
                                                      spec.min_samples + 1));
    if (pool.size() < want)
      throw InfeasibleSpec("not enough samples in selected classes");
    detail::shuffle(pool, rng);
    shard.assign(pool.begin(), pool.begin() + want);
    std::sort(shard.begin(), shard.end());
  }
  return shards;
}

struct Model {
  enum class Kind { logistic, mlp };
  Kind kind = Kind::logistic;
  std::size_t features = 0;
  std::size_t classes = 0;
  std::size_t hidden = 0;  // mlp only
  double l2 = 1e-3;        // ridge term keeping the task strongly convex

  std::size_t dim() const {
    if (kind == Kind::logistic) return classes * (features + 1);
    return hidden * (features + 1) + classes * (hidden + 1);
  }
};

namespace detail {

// class scores for one sample; logits has space for classes (+hidden scratch
// handled by caller for the mlp)
inline void logistic_scores(const Model& m, std::span<const double> w,
                            std::span<const double> x,
                            std::span<double> logits) {
  for (std::size_t c = 0; c < m.classes; ++c) {
    const double* wc = w.data() + c * (m.features + 1);
    double s = wc[m.features];  // bias
    for (std::size_t j = 0; j < m.features; ++j) s += wc[j] * x[j];
    logits[c] = s;
  }
}

inline void mlp_forward(const Model& m, std::span<const double> w,
                        std::span<const double> x, std::span<double> hidden,
                        std::span<double> logits) {
  const double* w1 = w.data();                              // hidden x (f+1)
  const double* w2 = w.data() + m.hidden * (m.features + 1);  // classes x (h+1)
  for (std::size_t h = 0; h < m.hidden; ++h) {
    const double* row = w1 + h * (m.features + 1);
    double s = row[m.features];
    for (std::size_t j = 0; j < m.features; ++j) s += row[j] * x[j];
    hidden[h] = std::tanh(s);
  }
  for (std::size_t c = 0; c < m.classes; ++c) {
    const double* row = w2 + c * (m.hidden + 1);
    double s = row[m.hidden];
    for (std::size_t h = 0; h < m.hidden; ++h) s += row[h] * hidden[h];
    logits[c] = s;
  }
}

// in-place softmax with the usual max shift; returns log(sum exp)
inline double softmax(std::span<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : logits) v /= sum;
  return mx + std::log(sum);
}

}  // namespace detail

/// Mean cross-entropy over the batch plus the l2/2*||w||^2 ridge term, and
/// its exact gradient.
inline double loss_and_grad(const Model& m, std::span<const double> w,
                            const Dataset& ds,
                            std::span<const std::uint32_t> batch,
                            std::span<double> grad) {
  if (batch.empty()) throw EmptyShard("empty batch");
  if (w.size() != m.dim() || grad.size() != m.dim() || ds.f != m.features)
    throw DimensionMismatch("model/batch dimensions disagree");

  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<double> logits(m.classes);
  std::vector<double> hidden(m.hidden);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;

  for (std::uint32_t idx : batch) {
    const auto x = ds.row(idx);
    const int label = ds.y[idx];
    if (m.kind == Model::Kind::logistic) {
      detail::logistic_scores(m, w, x, logits);
      const double raw_label = logits[label];
      const double lse = detail::softmax(logits);
      loss += lse - raw_label;  // -log p_label
      for (std::size_t c = 0; c < m.classes; ++c) {
        const double delta =
            (logits[c] - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_b;
        double* gc = grad.data() + c * (m.features + 1);
        for (std::size_t j = 0; j < m.features; ++j) gc[j] += delta * x[j];
        gc[m.features] += delta;
      }
    } else {
      detail::mlp_forward(m, w, x, hidden, logits);
      const double raw_label = logits[label];
      const double lse = detail::softmax(logits);
      loss += lse - raw_label;
      const double* w2 = w.data() + m.hidden * (m.features + 1);
      double* g1 = grad.data();
      double* g2 = grad.data() + m.hidden * (m.features + 1);
      std::vector<double> dhidden(m.hidden, 0.0);
      for (std::size_t c = 0; c < m.classes; ++c) {
        const double delta =
            (logits[c] - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_b;
        double* row = g2 + c * (m.hidden + 1);
        for (std::size_t h = 0; h < m.hidden; ++h) {
          row[h] += delta * hidden[h];
          dhidden[h] += delta * w2[c * (m.hidden + 1) + h];
        }
        row[m.hidden] += delta;
      }
      for (std::size_t h = 0; h < m.hidden; ++h) {
        const double dpre = dhidden[h] * (1.0 - hidden[h] * hidden[h]);
        double* row = g1 + h * (m.features + 1);
        for (std::size_t j = 0; j < m.features; ++j) row[j] += dpre * x[j];
        row[m.features] += dpre;
      }
    }
  }
  loss *= inv_b;

  double reg = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    reg += w[j] * w[j];
    grad[j] += m.l2 * w[j];
  }
  return loss + 0.5 * m.l2 * reg;
}

/// Mean cross-entropy (no ridge term) and argmax accuracy on a dataset.
/// Score ties resolve to the lowest class index.
inline std::pair<double, double> evaluate(const Model& m,
                                          std::span<const double> w,
                                          const Dataset& ds) {
  if (ds.n == 0) throw EmptyShard("empty evaluation set");
  if (w.size() != m.dim() || ds.f != m.features)
    throw DimensionMismatch("model/dataset dimensions disagree");
  std::vector<double> logits(m.classes);
  std::vector<double> hidden(m.hidden);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (m.kind == Model::Kind::logistic)
      detail::logistic_scores(m, w, ds.row(i), logits);
    else
      detail::mlp_forward(m, w, ds.row(i), hidden, logits);
    std::size_t best = 0;
    for (std::size_t c = 1; c < m.classes; ++c)
      if (logits[c] > logits[best]) best = c;
    if (static_cast<int>(best) == ds.y[i]) ++correct;
    const double raw_label = logits[ds.y[i]];
    loss += detail::softmax(logits) - raw_label;
  }
  return {loss / static_cast<double>(ds.n),
          static_cast<double>(correct) / static_cast<double>(ds.n)};
}

/// Loads a dataset from CSV: header row with a `label` column, every other
/// column a decimal real feature.
inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidParams("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidParams("empty csv " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
  };

  const auto header = split(line);
  std::ptrdiff_t label_col = -1;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == "label") label_col = static_cast<std::ptrdiff_t>(j);
  if (label_col < 0) throw InvalidParams("csv is missing a label column");

  Dataset ds;
  ds.f = header.size() - 1;
  int max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw InvalidParams("csv row width mismatch");
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (static_cast<std::ptrdiff_t>(j) == label_col) {
        const int label = std::stoi(cells[j]);
        if (label < 0) throw InvalidParams("negative label");
        max_label = std::max(max_label, label);
        ds.y.push_back(label);
      } else {
        ds.x.push_back(std::stod(cells[j]));
      }
    }
    ++ds.n;
  }
  if (ds.n == 0) throw InvalidParams("csv has no data rows");
  ds.c = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

}  // namespace fedclust::tasks
