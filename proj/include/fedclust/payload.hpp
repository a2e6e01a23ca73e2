#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <ostream>
#include <span>
#include <vector>

#include "fedclust/codec.hpp"
#include "fedclust/errors.hpp"

namespace fedclust::payload {

using codec::CompressedUpdate;

/// Bits needed to address n distinct values (ceil(log2 n); 0 when n <= 1).
inline int id_bits(std::uint64_t n) {
  return n <= 1 ? 0 : std::bit_width(n - 1);
}

namespace detail {

// LSB-first bit packing: bit i of the stream lands in byte i/8 at position
// i%8. Sections are zero-padded to an octet boundary by construction.
class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint64_t value, int nbits) {
    for (int b = 0; b < nbits; ++b) {
      if (bit_ == 0) out_.push_back(0);
      out_.back() |= static_cast<std::uint8_t>((value >> b) & 1u) << bit_;
      bit_ = (bit_ + 1) & 7;
    }
  }

  void align() { bit_ = 0; }

 private:
  std::vector<std::uint8_t>& out_;
  int bit_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> data, std::size_t& pos)
      : data_(data), pos_(pos) {}

  std::uint64_t get(int nbits) {
    std::uint64_t v = 0;
    for (int b = 0; b < nbits; ++b) {
      if (pos_ >= data_.size()) throw MalformedPayload("truncated payload");
      v |= static_cast<std::uint64_t>((data_[pos_] >> bit_) & 1u) << b;
      if (++bit_ == 8) {
        bit_ = 0;
        ++pos_;
      }
    }
    return v;
  }

  void align() {
    if (bit_ != 0) {
      bit_ = 0;
      ++pos_;
    }
  }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t& pos_;
  int bit_ = 0;
};

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) {
  out.push_back(v);
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& out, double v) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline std::uint8_t get_u8(std::span<const std::uint8_t> d, std::size_t& pos) {
  if (pos + 1 > d.size()) throw MalformedPayload("truncated payload");
  return d[pos++];
}

inline std::uint16_t get_u16(std::span<const std::uint8_t> d, std::size_t& pos) {
  if (pos + 2 > d.size()) throw MalformedPayload("truncated payload");
  const std::uint16_t v =
      static_cast<std::uint16_t>(d[pos]) |
      static_cast<std::uint16_t>(static_cast<std::uint16_t>(d[pos + 1]) << 8);
  pos += 2;
  return v;
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> d, std::size_t& pos) {
  if (pos + 4 > d.size()) throw MalformedPayload("truncated payload");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(d[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

inline double get_f32(std::span<const std::uint8_t> d, std::size_t& pos) {
  return static_cast<double>(std::bit_cast<float>(get_u32(d, pos)));
}

}  // namespace detail

inline constexpr std::uint8_t kMagic[4] = {'F', 'C', 'P', '1'};

/// Serializes a compressed update into the FCP1 byte layout. The byte count
/// of the result is what the traffic ledger records for a transmission.
inline std::vector<std::uint8_t> encode(const CompressedUpdate& c) {
  using namespace detail;
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u8(out, static_cast<std::uint8_t>(codec::codec_of(c)));
  put_u32(out, static_cast<std::uint32_t>(codec::dimension_of(c)));

  struct Visitor {
    std::vector<std::uint8_t>& out;

    void operator()(const codec::DensePayload& p) const {
      for (double v : p.values) put_f32(out, v);
    }

    void operator()(const codec::MucscPayload& p) const {
      const int z = p.codebook.size();
      put_u16(out, static_cast<std::uint16_t>(z));
      for (double r : p.codebook.centroids) put_f32(out, r);
      const int bits = id_bits(static_cast<std::uint64_t>(z));
      if (bits == 0) return;  // Z=1: ids are implicit
      BitWriter w(out);
      for (std::uint32_t id : p.ids) w.put(id, bits);
    }

    void operator()(const codec::BmucscPayload& p) const {
      put_u32(out, static_cast<std::uint32_t>(p.indices.size()));
      const int z = p.codebook.size();
      put_u16(out, static_cast<std::uint16_t>(z));
      for (double r : p.codebook.centroids) put_f32(out, r);
      put_f32(out, p.rest_mean);
      const int ibits = id_bits(p.d);
      const int cbits = id_bits(static_cast<std::uint64_t>(z));
      BitWriter w(out);
      for (std::size_t j = 0; j < p.indices.size(); ++j) {
        w.put(p.indices[j], ibits);
        w.put(p.cluster_ids[j], cbits);
      }
    }

    void operator()(const codec::SignPayload& p) const {
      put_f32(out, p.scale);
      BitWriter w(out);
      for (std::uint8_t s : p.negative) w.put(s, 1);
    }

    void operator()(const codec::QsgdPayload& p) const {
      put_u8(out, static_cast<std::uint8_t>(p.bit_width));
      put_f32(out, p.norm);
      BitWriter w(out);
      for (std::size_t m = 0; m < p.levels.size(); ++m) {
        w.put(p.negative[m], 1);
        w.put(p.levels[m], p.bit_width);
      }
    }

    void operator()(const codec::StcPayload& p) const {
      put_u32(out, static_cast<std::uint32_t>(p.indices.size()));
      put_f32(out, p.mu);
      const int ibits = id_bits(p.d);
      BitWriter w(out);
      for (std::size_t j = 0; j < p.indices.size(); ++j) {
        w.put(p.indices[j], ibits);
        w.put(p.negative[j], 1);
      }
    }

    void operator()(const codec::DgcPayload& p) const {
      put_u32(out, static_cast<std::uint32_t>(p.indices.size()));
      const int ibits = id_bits(p.d);
      BitWriter w(out);
      for (std::uint32_t idx : p.indices) w.put(idx, ibits);
      w.align();
      for (double v : p.values) put_f32(out, v);
    }
  };
  std::visit(Visitor{out}, c);
  return out;
}

/// Exact inverse of encode on well-formed payloads.
inline CompressedUpdate decode(std::span<const std::uint8_t> w) {
  using namespace detail;
  std::size_t pos = 0;
  if (w.size() < 4 || std::memcmp(w.data(), kMagic, 4) != 0)
    throw MalformedPayload("bad magic");
  pos = 4;
  const std::uint8_t id = get_u8(w, pos);
  const std::uint32_t d = get_u32(w, pos);

  auto check_ascending = [](const std::vector<std::uint32_t>& idx,
                            std::uint32_t dim) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] >= dim) throw MalformedPayload("index out of range");
      if (j > 0 && idx[j] <= idx[j - 1])
        throw MalformedPayload("indices not strictly increasing");
    }
  };
  auto finish = [&](CompressedUpdate c) {
    if (pos != w.size()) throw MalformedPayload("trailing bytes");
    return c;
  };

  switch (static_cast<codec::Codec>(id)) {
    case codec::Codec::dense: {
      codec::DensePayload p;
      p.values.resize(d);
      for (auto& v : p.values) v = get_f32(w, pos);
      return finish(std::move(p));
    }
    case codec::Codec::mucsc: {
      codec::MucscPayload p;
      const std::uint16_t z = get_u16(w, pos);
      if (z == 0) throw MalformedPayload("empty codebook");
      p.codebook.centroids.resize(z);
      for (auto& r : p.codebook.centroids) r = get_f32(w, pos);
      p.ids.resize(d);
      const int bits = id_bits(z);
      if (bits > 0) {
        BitReader rd(w, pos);
        for (auto& cid : p.ids) {
          cid = static_cast<std::uint32_t>(rd.get(bits));
          if (cid >= z) throw MalformedPayload("cluster id >= Z");
        }
        rd.align();
      }
      return finish(std::move(p));
    }
    case codec::Codec::bmucsc: {
      codec::BmucscPayload p;
      p.d = d;
      const std::uint32_t d0 = get_u32(w, pos);
      const std::uint16_t z = get_u16(w, pos);
      if (z == 0) throw MalformedPayload("empty codebook");
      p.codebook.centroids.resize(z);
      for (auto& r : p.codebook.centroids) r = get_f32(w, pos);
      p.rest_mean = get_f32(w, pos);
      p.indices.resize(d0);
      p.cluster_ids.resize(d0);
      const int ibits = id_bits(d);
      const int cbits = id_bits(z);
      BitReader rd(w, pos);
      for (std::uint32_t j = 0; j < d0; ++j) {
        p.indices[j] = static_cast<std::uint32_t>(rd.get(ibits));
        p.cluster_ids[j] = static_cast<std::uint32_t>(rd.get(cbits));
        if (p.cluster_ids[j] >= z) throw MalformedPayload("cluster id >= Z");
      }
      rd.align();
      check_ascending(p.indices, d);
      return finish(std::move(p));
    }
    case codec::Codec::signsgd: {
      codec::SignPayload p;
      p.d = d;
      p.scale = get_f32(w, pos);
      p.negative.resize(d);
      BitReader rd(w, pos);
      for (auto& s : p.negative) s = static_cast<std::uint8_t>(rd.get(1));
      rd.align();
      return finish(std::move(p));
    }
    case codec::Codec::qsgd: {
      codec::QsgdPayload p;
      p.d = d;
      p.bit_width = get_u8(w, pos);
      if (p.bit_width < 1 || p.bit_width > 16)
        throw MalformedPayload("qsgd bit width");
      p.norm = get_f32(w, pos);
      p.levels.resize(d);
      p.negative.resize(d);
      BitReader rd(w, pos);
      for (std::uint32_t m = 0; m < d; ++m) {
        p.negative[m] = static_cast<std::uint8_t>(rd.get(1));
        p.levels[m] = static_cast<std::uint32_t>(rd.get(p.bit_width));
      }
      rd.align();
      return finish(std::move(p));
    }
    case codec::Codec::stc: {
      codec::StcPayload p;
      p.d = d;
      const std::uint32_t d0 = get_u32(w, pos);
      p.mu = get_f32(w, pos);
      p.indices.resize(d0);
      p.negative.resize(d0);
      const int ibits = id_bits(d);
      BitReader rd(w, pos);
      for (std::uint32_t j = 0; j < d0; ++j) {
        p.indices[j] = static_cast<std::uint32_t>(rd.get(ibits));
        p.negative[j] = static_cast<std::uint8_t>(rd.get(1));
      }
      rd.align();
      check_ascending(p.indices, d);
      return finish(std::move(p));
    }
    case codec::Codec::dgc: {
      codec::DgcPayload p;
      p.d = d;
      const std::uint32_t d0 = get_u32(w, pos);
      p.indices.resize(d0);
      const int ibits = id_bits(d);
      BitReader rd(w, pos);
      for (auto& idx : p.indices)
        idx = static_cast<std::uint32_t>(rd.get(ibits));
      rd.align();
      check_ascending(p.indices, d);
      p.values.resize(d0);
      for (auto& v : p.values) v = get_f32(w, pos);
      return finish(std::move(p));
    }
  }
  throw MalformedPayload("unknown codec id");
}

// ---------------------------------------------------------------------------
// Traffic accounting

enum class Direction : std::uint8_t { uplink, downlink };

struct TrafficEntry {
  std::uint32_t round;
  std::uint32_t client;
  Direction dir;
  std::uint64_t bytes;
};

/// Per-transmission byte log. Single writer (the round orchestrator);
/// cumulative totals are monotone.
class TrafficLedger {
 public:
  void record(std::uint32_t round, std::uint32_t client, Direction dir,
              std::uint64_t bytes) {
    entries_.push_back({round, client, dir, bytes});
    (dir == Direction::uplink ? up_total_ : down_total_) += bytes;
    if (round + 1 > rounds_) rounds_ = round + 1;
  }

  const std::vector<TrafficEntry>& entries() const { return entries_; }
  std::uint64_t uplink_total() const { return up_total_; }
  std::uint64_t downlink_total() const { return down_total_; }
  std::uint64_t total() const { return up_total_ + down_total_; }
  std::uint32_t rounds() const { return rounds_; }
  bool empty() const { return entries_.empty(); }

  void write_csv(std::ostream& os) const {
    os << "round,client_id,direction,bytes\n";
    for (const auto& e : entries_)
      os << e.round << ',' << e.client << ','
         << (e.dir == Direction::uplink ? "up" : "down") << ',' << e.bytes
         << '\n';
  }

 private:
  std::vector<TrafficEntry> entries_;
  std::uint64_t up_total_ = 0;
  std::uint64_t down_total_ = 0;
  std::uint32_t rounds_ = 0;
};

/// Expected traffic per client per round: the mean uplink payload weighted by
/// the participation probability K/N, plus the broadcast payload once.
inline double expected_bytes_per_round(const TrafficLedger& ledger, int k,
                                       int n) {
  if (ledger.empty()) throw EmptyLedger("no ledger entries");
  if (k < 1 || n < k) throw InvalidParams("need 1 <= k <= n");
  double up_sum = 0.0, down_sum = 0.0;
  std::uint64_t up_count = 0, down_count = 0;
  for (const auto& e : ledger.entries()) {
    if (e.dir == Direction::uplink) {
      up_sum += static_cast<double>(e.bytes);
      ++up_count;
    } else {
      down_sum += static_cast<double>(e.bytes);
      ++down_count;
    }
  }
  const double up_mean = up_count ? up_sum / static_cast<double>(up_count) : 0.0;
  const double down_mean =
      down_count ? down_sum / static_cast<double>(down_count) : 0.0;
  return up_mean * (static_cast<double>(k) / n) + down_mean;
}

/// Ratio of an uncompressed per-round baseline to the ledger's expected
/// per-round traffic, both under the K/N-weighted accounting above.
inline double measured_rate(const TrafficLedger& ledger,
                            double baseline_bytes_per_round, int k, int n) {
  return baseline_bytes_per_round / expected_bytes_per_round(ledger, k, n);
}

/// Actual-bytes rate between two runs: how much smaller this ledger's total
/// traffic is than the reference's. Used for time-model comparisons, where
/// every transmitted byte counts whether or not a client was likely selected.
inline double traffic_ratio(const TrafficLedger& reference,
                            const TrafficLedger& compressed) {
  if (reference.empty() || compressed.empty())
    throw EmptyLedger("no ledger entries");
  return static_cast<double>(reference.total()) /
         static_cast<double>(compressed.total());
}

// ---------------------------------------------------------------------------
// Closed-form compression rates (uplink weighted by K/N, downlink once,
// against a 2hd uncompressed round).

namespace detail {

inline void check_rate_args(std::uint64_t d, int k, int n, double h) {
  if (d < 1) throw InvalidParams("d >= 1 required");
  if (k < 1 || k > n) throw InvalidParams("need 1 <= k <= n");
  if (h <= 0) throw InvalidParams("h > 0 required");
}

}  // namespace detail

inline double rate_mucsc(std::uint64_t d, int z_u, int z_d, int k, int n,
                         double h = 4.0) {
  detail::check_rate_args(d, k, n, h);
  if (z_u < 2 || z_d < 2) throw InvalidParams("z >= 2 required");
  const double dd = static_cast<double>(d);
  const double up = (id_bits(z_u) / 8.0 * dd + h * z_u) *
                    (static_cast<double>(k) / n);
  const double down = h * z_d + id_bits(z_d) / 8.0 * dd;
  return 2.0 * h * dd / (up + down);
}

inline double rate_bmucsc(std::uint64_t d, std::uint64_t d0, int z_u, int z_d,
                          int k, int n, double h = 4.0) {
  detail::check_rate_args(d, k, n, h);
  if (z_u < 2 || z_d < 2) throw InvalidParams("z >= 2 required");
  if (d0 < 1 || d0 > d) throw InvalidParams("need 1 <= d0 <= d");
  const double dd = static_cast<double>(d);
  const double dd0 = static_cast<double>(d0);
  const double rec_u = (id_bits(z_u) + id_bits(d)) / 8.0;
  const double rec_d = (id_bits(z_d) + id_bits(d)) / 8.0;
  const double omega_u =
      (rec_u * dd0 + h * z_u + h) * (static_cast<double>(k) / n);
  const double omega_d = rec_d * dd0 + h * (z_d + 1);
  return 2.0 * h * dd / (omega_u + omega_d);
}

inline double rate_signsgd(std::uint64_t d, int k, int n, double h = 4.0) {
  detail::check_rate_args(d, k, n, h);
  const double dd = static_cast<double>(d);
  const double per_dir = dd / 8.0;
  return 2.0 * h * dd / (per_dir * (static_cast<double>(k) / n) + per_dir);
}

inline double rate_qsgd(std::uint64_t d, int bits, int k, int n,
                        double h = 4.0) {
  detail::check_rate_args(d, k, n, h);
  if (bits < 1) throw InvalidParams("bits >= 1 required");
  const double dd = static_cast<double>(d);
  return 2.0 * h * dd /
         (bits / 8.0 * dd * (static_cast<double>(k) / n) + h * dd);
}

inline double rate_stc(std::uint64_t d, std::uint64_t d0, int k, int n,
                       double h = 4.0) {
  detail::check_rate_args(d, k, n, h);
  if (d0 < 1 || d0 > d) throw InvalidParams("need 1 <= d0 <= d");
  const double dd = static_cast<double>(d);
  const double per_dir =
      (id_bits(d) + 1) / 8.0 * static_cast<double>(d0) + h;  // +h for mu
  return 2.0 * h * dd / (per_dir * (static_cast<double>(k) / n) + per_dir);
}

inline double rate_dgc(std::uint64_t d, std::uint64_t d0, int k, int n,
                       double h = 4.0) {
  detail::check_rate_args(d, k, n, h);
  if (d0 < 1 || d0 > d) throw InvalidParams("need 1 <= d0 <= d");
  const double dd = static_cast<double>(d);
  const double up =
      (id_bits(d) / 8.0 + h) * static_cast<double>(d0);  // ids + exact values
  return 2.0 * h * dd / (up * (static_cast<double>(k) / n) + h * dd);
}

}  // namespace fedclust::payload
