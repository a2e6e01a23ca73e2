#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "fedclust/errors.hpp"
#include "fedclust/rng.hpp"

namespace fedclust::net {

/// Per-client link speed model: one Gaussian draw per client per round,
/// clamped below at `floor_bps` to keep the tail physical.
struct LinkModel {
  double mean_bps = 1.4e6;     // 1.4 Mb/s up and down
  double std_fraction = 0.10;  // sigma as a fraction of the mean
  double floor_bps = 1.4e5;

  bool valid() const {
    return mean_bps > 0 && std_fraction >= 0 && std_fraction < 1 &&
           floor_bps > 0;
  }
};

inline std::vector<double> sample_speeds(const LinkModel& lm, int n, Rng& rng) {
  if (!lm.valid() || n < 1) throw InvalidParams("bad link model or n");
  std::vector<double> speeds(n);
  for (auto& s : speeds) {
    s = lm.mean_bps + lm.std_fraction * lm.mean_bps * standard_normal(rng);
    s = std::max(s, lm.floor_bps);
  }
  return speeds;
}

/// Lockstep phase time: everyone transfers in parallel, the phase ends when
/// the slowest client finishes, i.e. max_i 8*bytes_i/speed_i.
inline double phase_time(std::span<const std::uint64_t> payload_bytes,
                         std::span<const double> speeds) {
  if (payload_bytes.size() != speeds.size())
    throw DimensionMismatch("bytes/speeds length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < payload_bytes.size(); ++i)
    worst = std::max(worst,
                     8.0 * static_cast<double>(payload_bytes[i]) / speeds[i]);
  return worst;
}

/// One round of communication: the uplink phase (participants only) followed
/// by the downlink broadcast phase (all clients).
inline double round_time(std::span<const std::uint64_t> uplink_bytes,
                         std::span<const double> uplink_speeds,
                         std::span<const std::uint64_t> downlink_bytes,
                         std::span<const double> downlink_speeds) {
  return phase_time(uplink_bytes, uplink_speeds) +
         phase_time(downlink_bytes, downlink_speeds);
}

}  // namespace fedclust::net
