#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fedclust/errors.hpp"
#include "fedclust/rng.hpp"

namespace fedclust::codec {

using UpdateVector = std::vector<double>;
using ClusterAssignment = std::vector<std::uint32_t>;

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

/// Sorted quantization centroids r_1 < ... < r_Z. After fitting, r_1 and r_Z
/// equal the minimum and maximum of the source vector; Z collapses to 1 only
/// when the vector is constant.
struct Codebook {
  std::vector<double> centroids;

  bool operator==(const Codebook&) const = default;

  int size() const { return static_cast<int>(centroids.size()); }
  double min() const { return centroids.front(); }
  double max() const { return centroids.back(); }

  bool valid() const {
    if (centroids.empty()) return false;
    for (std::size_t z = 1; z < centroids.size(); ++z)
      if (!(centroids[z - 1] < centroids[z])) return false;
    return all_finite(centroids);
  }

  /// Cell index z with r_z <= x <= r_{z+1} (half-open cells, last one closed).
  int cell(double x) const {
    const auto it =
        std::upper_bound(centroids.begin(), centroids.end(), x);
    const int z = static_cast<int>(it - centroids.begin()) - 1;
    return std::clamp(z, 0, size() - 2);
  }
};

struct EmConfig {
  int z = 16;           // target centroid count
  int iters = 5;        // E/M passes
  double alpha = 1e-3;  // centroid learning rate
  double decay = 10.0;  // rate division factor on out-of-range steps

  bool valid() const {
    return z >= 2 && iters >= 1 && alpha > 0 && decay > 1;
  }
};

/// Quantization error sum((r_{z+1} - u_m)(u_m - r_z)): the expected squared
/// error of the stochastic quantizer, and the objective the EM fit minimizes.
inline double compression_loss(const Codebook& cb,
                               std::span<const double> u) {
  if (cb.size() == 1) {
    for (double x : u)
      if (x != cb.centroids[0]) throw OutOfRange("value outside codebook");
    return 0.0;
  }
  const double lo = cb.min(), hi = cb.max();
  double total = 0.0;
  for (double x : u) {
    if (!(x >= lo && x <= hi)) throw OutOfRange("value outside codebook");
    const int z = cb.cell(x);
    total += (cb.centroids[z + 1] - x) * (x - cb.centroids[z]);
  }
  return total;
}

inline Codebook uniform_codebook(double lo, double hi, int z) {
  Codebook cb;
  cb.centroids.resize(z);
  for (int k = 0; k < z; ++k)
    cb.centroids[k] = lo + (hi - lo) * k / (z - 1);
  cb.centroids.front() = lo;
  cb.centroids.back() = hi;
  return cb;
}

/// Fits a codebook to u by minimizing compression_loss.
///
/// Centroids start uniformly spaced on [min(u), max(u)]; the endpoints stay
/// pinned, and each pass moves the interior centroids one gradient step (in
/// place, so a step sees its already-updated left neighbor) and then refreshes
/// the cell assignment. A step that would leave its neighbor bracket is
/// rejected and the learning rate is divided by cfg.decay for the following
/// passes. If the fit ends up worse than the uniform spacing it started from,
/// the uniform codebook is returned instead.
inline Codebook fit_centroids(std::span<const double> u, const EmConfig& cfg) {
  if (!cfg.valid()) throw InvalidConfig("EmConfig violates invariants");
  if (u.empty()) throw InvalidConfig("empty input vector");
  if (!all_finite(u)) throw NonFiniteInput("NaN/Inf in update vector");

  const auto [lo_it, hi_it] = std::minmax_element(u.begin(), u.end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo == hi) return Codebook{{lo}};  // constant vector collapses to Z=1

  Codebook uniform = uniform_codebook(lo, hi, cfg.z);
  if (cfg.z == 2) return uniform;  // both centroids pinned, nothing to fit

  const double uniform_loss = compression_loss(uniform, u);
  Codebook cb = uniform;
  const int z = cfg.z;
  double alpha = cfg.alpha;
  std::vector<double> cell_sum(z - 1);
  std::vector<std::size_t> cell_count(z - 1);

  for (int pass = 0; pass < cfg.iters; ++pass) {
    std::fill(cell_sum.begin(), cell_sum.end(), 0.0);
    std::fill(cell_count.begin(), cell_count.end(), std::size_t{0});
    for (double x : u) {
      const int c = cb.cell(x);
      cell_sum[c] += x;
      cell_count[c] += 1;
    }
    bool rejected = false;
    for (int k = 1; k < z - 1; ++k) {
      // dJ/dr_k = sum_{m in L_{k-1}} (u_m - r_{k-1})
      //         - sum_{m in L_k}     (r_{k+1} - u_m)
      const double grad =
          (cell_sum[k - 1] - cell_count[k - 1] * cb.centroids[k - 1]) -
          (cell_count[k] * cb.centroids[k + 1] - cell_sum[k]);
      const double cand = cb.centroids[k] - alpha * grad;
      if (cand <= cb.centroids[k - 1] || cand >= cb.centroids[k + 1]) {
        rejected = true;
      } else {
        cb.centroids[k] = cand;
      }
    }
    if (rejected) alpha /= cfg.decay;
  }

  if (compression_loss(cb, u) > uniform_loss) return uniform;
  return cb;
}

/// Merges adjacent centroids that coincide within tol (relative to the span).
/// Needed after narrowing centroids to transmission precision, where distinct
/// doubles can land on the same 32-bit value.
inline Codebook merge_equal_centroids(Codebook cb, double rel_tol = 1e-12) {
  if (cb.size() <= 1) return cb;
  const double tol = rel_tol * (cb.max() - cb.min());
  std::vector<double> merged;
  merged.reserve(cb.centroids.size());
  merged.push_back(cb.centroids.front());
  for (std::size_t k = 1; k < cb.centroids.size(); ++k)
    if (cb.centroids[k] - merged.back() > tol)
      merged.push_back(cb.centroids[k]);
  cb.centroids = std::move(merged);
  return cb;
}

/// Stochastic soft-cluster quantization: u_m in [r_z, r_{z+1}] maps to id z
/// with probability (r_{z+1}-u_m)/(r_{z+1}-r_z) and to z+1 otherwise, making
/// the decoded value an unbiased estimate of u_m. Values equal to a centroid
/// map to it deterministically (no random draw is consumed).
inline ClusterAssignment quantize_stochastic(const Codebook& cb,
                                             std::span<const double> u,
                                             Rng& rng) {
  ClusterAssignment ids(u.size());
  if (cb.size() == 1) {
    for (double x : u)
      if (x != cb.centroids[0]) throw OutOfRange("value outside codebook");
    return ids;
  }
  const double lo = cb.min(), hi = cb.max();
  for (std::size_t m = 0; m < u.size(); ++m) {
    const double x = u[m];
    if (!(x >= lo && x <= hi)) throw OutOfRange("value outside codebook");
    const int z = cb.cell(x);
    const double rl = cb.centroids[z], rr = cb.centroids[z + 1];
    if (x == rl) {
      ids[m] = static_cast<std::uint32_t>(z);
    } else if (x == rr) {
      ids[m] = static_cast<std::uint32_t>(z + 1);
    } else {
      const double p_low = (rr - x) / (rr - rl);
      ids[m] = static_cast<std::uint32_t>(uniform01(rng) < p_low ? z : z + 1);
    }
  }
  return ids;
}

}  // namespace fedclust::codec
