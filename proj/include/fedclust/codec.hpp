#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedclust/codebook.hpp"
#include "fedclust/errors.hpp"
#include "fedclust/rng.hpp"

namespace fedclust::codec {

enum class Codec : std::uint8_t {
  dense = 0,
  mucsc = 1,
  bmucsc = 2,
  signsgd = 3,
  qsgd = 4,
  stc = 5,
  dgc = 6,
};

inline std::string to_string(Codec c) {
  switch (c) {
    case Codec::dense: return "none";
    case Codec::mucsc: return "mucsc";
    case Codec::bmucsc: return "bmucsc";
    case Codec::signsgd: return "signsgd";
    case Codec::qsgd: return "qsgd";
    case Codec::stc: return "stc";
    case Codec::dgc: return "dgc";
  }
  return "?";
}

inline std::optional<Codec> codec_from_string(std::string_view s) {
  if (s == "none" || s == "dense") return Codec::dense;
  if (s == "mucsc") return Codec::mucsc;
  if (s == "bmucsc") return Codec::bmucsc;
  if (s == "signsgd" || s == "ssgd") return Codec::signsgd;
  if (s == "qsgd") return Codec::qsgd;
  if (s == "stc") return Codec::stc;
  if (s == "dgc") return Codec::dgc;
  return std::nullopt;
}

// Every real number placed in a payload is narrowed to IEEE binary32 at
// compression time, so the in-memory payload and its wire round trip decode
// to the same vector.
inline double wire_real(double x) { return static_cast<double>(static_cast<float>(x)); }

struct DensePayload {
  std::vector<double> values;

  bool operator==(const DensePayload&) const = default;
};

struct MucscPayload {
  Codebook codebook;
  ClusterAssignment ids;  // one per element, each < codebook.size()

  bool operator==(const MucscPayload&) const = default;
};

struct BmucscPayload {
  std::uint32_t d = 0;
  std::vector<std::uint32_t> indices;      // strictly increasing, < d
  std::vector<std::uint32_t> cluster_ids;  // parallel to indices
  Codebook codebook;
  double rest_mean = 0.0;  // stands in for every unselected element

  bool operator==(const BmucscPayload&) const = default;
};

struct SignPayload {
  std::uint32_t d = 0;
  std::vector<std::uint8_t> negative;  // 1 bit per element
  double scale = 0.0;

  bool operator==(const SignPayload&) const = default;
};

struct QsgdPayload {
  std::uint32_t d = 0;
  int bit_width = 4;
  double norm = 0.0;
  std::vector<std::uint32_t> levels;   // each <= 2^bit_width - 1
  std::vector<std::uint8_t> negative;  // parallel sign bits

  bool operator==(const QsgdPayload&) const = default;
};

struct StcPayload {
  std::uint32_t d = 0;
  std::vector<std::uint32_t> indices;  // strictly increasing, < d
  std::vector<std::uint8_t> negative;  // parallel sign bits
  double mu = 0.0;                     // shared magnitude

  bool operator==(const StcPayload&) const = default;
};

struct DgcPayload {
  std::uint32_t d = 0;
  std::vector<std::uint32_t> indices;  // strictly increasing, < d
  std::vector<double> values;          // parallel exact values

  bool operator==(const DgcPayload&) const = default;
};

using CompressedUpdate =
    std::variant<DensePayload, MucscPayload, BmucscPayload, SignPayload,
                 QsgdPayload, StcPayload, DgcPayload>;

inline Codec codec_of(const CompressedUpdate& c) {
  return static_cast<Codec>(c.index());
}

inline std::size_t dimension_of(const CompressedUpdate& c) {
  return std::visit(
      [](const auto& p) -> std::size_t {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, DensePayload>) return p.values.size();
        else if constexpr (std::is_same_v<T, MucscPayload>) return p.ids.size();
        else return p.d;
      },
      c);
}

/// Per-client accumulator of untransmitted update mass (STC/DGC error
/// feedback). Owned by exactly one client.
struct ResidualState {
  std::vector<double> residual;

  explicit ResidualState(std::size_t d = 0) : residual(d, 0.0) {}
};

struct CodecConfig {
  Codec kind = Codec::dense;
  EmConfig em{};                  // mucsc / bmucsc centroid fitting
  double bmucsc_fraction = 0.01;  // share of coordinates kept exactly
  double stc_fraction = 0.03;
  double dgc_fraction = 0.01;
  int qsgd_bits = 4;

  bool needs_residual() const {
    return kind == Codec::stc || kind == Codec::dgc;
  }
};

namespace detail {

inline void check_input(std::span<const double> u) {
  if (u.empty()) throw InvalidParams("empty update vector");
  if (!all_finite(u)) throw NonFiniteInput("NaN/Inf in update vector");
}

// Narrows the codebook for transmission. Interior centroids round to nearest;
// the endpoints round outward so the fitted vector stays inside [r_1, r_Z].
inline Codebook wire_codebook(const Codebook& cb) {
  Codebook out = cb;
  for (double& r : out.centroids) r = wire_real(r);
  if (out.size() >= 2) {
    float lo = static_cast<float>(out.centroids.front());
    if (static_cast<double>(lo) > cb.centroids.front())
      lo = std::nextafterf(lo, -INFINITY);
    out.centroids.front() = lo;
    float hi = static_cast<float>(out.centroids.back());
    if (static_cast<double>(hi) < cb.centroids.back())
      hi = std::nextafterf(hi, INFINITY);
    out.centroids.back() = hi;
  }
  return merge_equal_centroids(std::move(out), 0.0);
}

/// Indices of the k largest-magnitude entries, ties broken toward the lower
/// index, returned in ascending index order.
inline std::vector<std::uint32_t> top_k_by_magnitude(
    std::span<const double> v, std::size_t k) {
  std::vector<std::uint32_t> order(v.size());
  std::iota(order.begin(), order.end(), 0u);
  std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ma = std::fabs(v[a]), mb = std::fabs(v[b]);
                     return ma != mb ? ma > mb : a < b;
                   });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

inline std::size_t rounded_count(double fraction, std::size_t d) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(d)));
  return std::clamp<std::size_t>(k, 1, d);
}

}  // namespace detail

inline MucscPayload compress_mucsc(std::span<const double> u,
                                   const EmConfig& em, Rng& rng) {
  const Codebook cb = detail::wire_codebook(fit_centroids(u, em));
  // Constant vector: one centroid, ids implicit (the narrowed centroid may
  // differ from the source value by under one float ulp, so skip the strict
  // range check inside quantize_stochastic).
  if (cb.size() == 1) return MucscPayload{cb, ClusterAssignment(u.size(), 0)};
  return MucscPayload{cb, quantize_stochastic(cb, u, rng)};
}

inline BmucscPayload compress_bmucsc(std::span<const double> u,
                                     const EmConfig& em, double fraction,
                                     Rng& rng) {
  const std::size_t d = u.size();
  const std::size_t d0 = detail::rounded_count(fraction, d);
  BmucscPayload p;
  p.d = static_cast<std::uint32_t>(d);
  p.indices = detail::top_k_by_magnitude(u, d0);

  std::vector<double> selected(d0);
  for (std::size_t j = 0; j < d0; ++j) selected[j] = u[p.indices[j]];
  p.codebook = detail::wire_codebook(fit_centroids(selected, em));
  p.cluster_ids = p.codebook.size() == 1
                      ? ClusterAssignment(d0, 0)
                      : quantize_stochastic(p.codebook, selected, rng);

  if (d0 < d) {
    double sum = 0.0;
    std::size_t j = 0;
    for (std::size_t m = 0; m < d; ++m) {
      if (j < d0 && p.indices[j] == m) { ++j; continue; }
      sum += u[m];
    }
    p.rest_mean = wire_real(sum / static_cast<double>(d - d0));
  }
  return p;
}

inline SignPayload compress_signsgd(std::span<const double> u) {
  SignPayload p;
  p.d = static_cast<std::uint32_t>(u.size());
  p.negative.resize(u.size());
  double abs_sum = 0.0;
  for (std::size_t m = 0; m < u.size(); ++m) {
    p.negative[m] = u[m] < 0.0 ? 1 : 0;
    abs_sum += std::fabs(u[m]);
  }
  p.scale = wire_real(abs_sum / static_cast<double>(u.size()));
  return p;
}

inline QsgdPayload compress_qsgd(std::span<const double> u, int bit_width,
                                 Rng& rng) {
  if (bit_width < 1 || bit_width > 16) throw InvalidParams("qsgd bit_width");
  QsgdPayload p;
  p.d = static_cast<std::uint32_t>(u.size());
  p.bit_width = bit_width;
  p.levels.resize(u.size());
  p.negative.resize(u.size());
  double sq = 0.0;
  for (double x : u) sq += x * x;
  p.norm = wire_real(std::sqrt(sq));
  const auto s = static_cast<std::uint32_t>((1u << bit_width) - 1);
  for (std::size_t m = 0; m < u.size(); ++m) {
    p.negative[m] = u[m] < 0.0 ? 1 : 0;
    if (p.norm == 0.0) continue;
    // stochastic rounding of |u_m|/norm onto the s-level grid; unbiased
    const double pos = std::fabs(u[m]) / p.norm * s;
    const double base = std::floor(pos);
    std::uint32_t level = static_cast<std::uint32_t>(base);
    if (uniform01(rng) < pos - base) ++level;
    p.levels[m] = std::min(level, s);
  }
  return p;
}

inline StcPayload compress_stc(std::span<const double> u, double fraction,
                               ResidualState& state) {
  if (state.residual.size() != u.size())
    throw DimensionMismatch("residual dimension");
  auto& r = state.residual;
  for (std::size_t m = 0; m < u.size(); ++m) r[m] += u[m];

  StcPayload p;
  p.d = static_cast<std::uint32_t>(u.size());
  const std::size_t d0 = detail::rounded_count(fraction, u.size());
  p.indices = detail::top_k_by_magnitude(r, d0);
  p.negative.resize(d0);
  double mag_sum = 0.0;
  for (std::size_t j = 0; j < d0; ++j) mag_sum += std::fabs(r[p.indices[j]]);
  p.mu = wire_real(mag_sum / static_cast<double>(d0));
  // subtract exactly what the receiver reconstructs
  for (std::size_t j = 0; j < d0; ++j) {
    const std::uint32_t m = p.indices[j];
    p.negative[j] = r[m] < 0.0 ? 1 : 0;
    r[m] -= p.negative[j] ? -p.mu : p.mu;
  }
  return p;
}

inline DgcPayload compress_dgc(std::span<const double> u, double fraction,
                               ResidualState& state) {
  if (state.residual.size() != u.size())
    throw DimensionMismatch("residual dimension");
  auto& r = state.residual;
  for (std::size_t m = 0; m < u.size(); ++m) r[m] += u[m];

  DgcPayload p;
  p.d = static_cast<std::uint32_t>(u.size());
  const std::size_t d0 = detail::rounded_count(fraction, u.size());
  p.indices = detail::top_k_by_magnitude(r, d0);
  p.values.resize(d0);
  for (std::size_t j = 0; j < d0; ++j) {
    const std::uint32_t m = p.indices[j];
    p.values[j] = wire_real(r[m]);
    r[m] -= p.values[j];
  }
  return p;
}

/// Compresses a model-update vector with the configured codec. STC and DGC
/// require the caller to pass their residual state; everything else ignores
/// it. Deterministic given the rng state.
inline CompressedUpdate compress(const CodecConfig& cfg,
                                 std::span<const double> u, Rng& rng,
                                 ResidualState* residual = nullptr) {
  detail::check_input(u);
  if (cfg.needs_residual() && residual == nullptr)
    throw MissingResidual(to_string(cfg.kind) + " requires a residual state");
  switch (cfg.kind) {
    case Codec::dense:
      return DensePayload{std::vector<double>(u.begin(), u.end())};
    case Codec::mucsc:
      return compress_mucsc(u, cfg.em, rng);
    case Codec::bmucsc:
      return compress_bmucsc(u, cfg.em, cfg.bmucsc_fraction, rng);
    case Codec::signsgd:
      return compress_signsgd(u);
    case Codec::qsgd:
      return compress_qsgd(u, cfg.qsgd_bits, rng);
    case Codec::stc:
      return compress_stc(u, cfg.stc_fraction, *residual);
    case Codec::dgc:
      return compress_dgc(u, cfg.dgc_fraction, *residual);
  }
  throw InvalidParams("unknown codec");
}

namespace detail {

inline void check_sparse_indices(const std::vector<std::uint32_t>& idx,
                                 std::uint32_t d) {
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= d) throw MalformedPayload("index out of range");
    if (j > 0 && idx[j] <= idx[j - 1])
      throw MalformedPayload("indices not strictly increasing");
  }
}

}  // namespace detail

inline UpdateVector decompress(const CompressedUpdate& c) {
  struct Visitor {
    UpdateVector operator()(const DensePayload& p) const { return p.values; }

    UpdateVector operator()(const MucscPayload& p) const {
      const auto z = static_cast<std::uint32_t>(p.codebook.size());
      UpdateVector out(p.ids.size());
      for (std::size_t m = 0; m < p.ids.size(); ++m) {
        if (p.ids[m] >= z) throw MalformedPayload("cluster id >= Z");
        out[m] = p.codebook.centroids[p.ids[m]];
      }
      return out;
    }

    UpdateVector operator()(const BmucscPayload& p) const {
      detail::check_sparse_indices(p.indices, p.d);
      if (p.cluster_ids.size() != p.indices.size())
        throw MalformedPayload("selected arrays disagree");
      const auto z = static_cast<std::uint32_t>(p.codebook.size());
      UpdateVector out(p.d, p.rest_mean);
      for (std::size_t j = 0; j < p.indices.size(); ++j) {
        if (p.cluster_ids[j] >= z) throw MalformedPayload("cluster id >= Z");
        out[p.indices[j]] = p.codebook.centroids[p.cluster_ids[j]];
      }
      return out;
    }

    UpdateVector operator()(const SignPayload& p) const {
      if (p.negative.size() != p.d) throw MalformedPayload("sign bits != d");
      UpdateVector out(p.d);
      for (std::size_t m = 0; m < p.d; ++m)
        out[m] = p.negative[m] ? -p.scale : p.scale;
      return out;
    }

    UpdateVector operator()(const QsgdPayload& p) const {
      if (p.levels.size() != p.d || p.negative.size() != p.d)
        throw MalformedPayload("qsgd arrays != d");
      const double s = static_cast<double>((1u << p.bit_width) - 1);
      UpdateVector out(p.d);
      for (std::size_t m = 0; m < p.d; ++m) {
        const double mag = p.norm * static_cast<double>(p.levels[m]) / s;
        out[m] = p.negative[m] ? -mag : mag;
      }
      return out;
    }

    UpdateVector operator()(const StcPayload& p) const {
      detail::check_sparse_indices(p.indices, p.d);
      if (p.negative.size() != p.indices.size())
        throw MalformedPayload("selected arrays disagree");
      UpdateVector out(p.d, 0.0);
      for (std::size_t j = 0; j < p.indices.size(); ++j)
        out[p.indices[j]] = p.negative[j] ? -p.mu : p.mu;
      return out;
    }

    UpdateVector operator()(const DgcPayload& p) const {
      detail::check_sparse_indices(p.indices, p.d);
      if (p.values.size() != p.indices.size())
        throw MalformedPayload("selected arrays disagree");
      UpdateVector out(p.d, 0.0);
      for (std::size_t j = 0; j < p.indices.size(); ++j)
        out[p.indices[j]] = p.values[j];
      return out;
    }
  };
  return std::visit(Visitor{}, c);
}

}  // namespace fedclust::codec
