#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedclust/errors.hpp"
#include "fedclust/fedsim.hpp"

namespace fedclust::cli {

/// Flat `section.key = value` configuration. '#' starts a comment; unknown
/// keys are rejected when resolving, so typos fail loudly.
class FlatConfig {
 public:
  static FlatConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  static FlatConfig parse(const std::string& text,
                          const std::string& origin = "<inline>") {
    FlatConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw InvalidConfig(origin + ":" + std::to_string(lineno) +
                            ": expected key = value");
      cfg.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
    return cfg;
  }

  void set(const std::string& key, const std::string& value) {
    if (key.empty()) throw InvalidConfig("empty config key");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  /// Content hash of the resolved key/value set; independent of the order
  /// the fields were written in (std::map iterates sorted).
  std::string manifest_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const std::string& s) {
      for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
      }
      h ^= 0x1f;
      h *= 0x100000001b3ULL;
    };
    for (const auto& [k, v] : values_) {
      mix(k);
      mix(v);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

namespace detail {

class Binder {
 public:
  explicit Binder(const FlatConfig& cfg) : cfg_(cfg) {}

  double real(const std::string& key, double fallback) {
    return has(key) ? parse_real(key) : fallback;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const std::string& s = value(key);
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw InvalidConfig(key + ": not an integer: " + s);
    return v;
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string& s = value(key);
    if (s == "true" || s == "1" || s == "on") return true;
    if (s == "false" || s == "0" || s == "off") return false;
    throw InvalidConfig(key + ": not a boolean: " + s);
  }

  std::string text(const std::string& key, const std::string& fallback) {
    return has(key) ? value(key) : fallback;
  }

  bool has(const std::string& key) {
    seen_.push_back(key);
    return cfg_.has(key);
  }

  /// Every key the caller never asked about is unknown: reject it.
  void reject_unknown() const {
    for (const auto& [k, v] : cfg_.values())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
        throw InvalidConfig("unknown config key: " + k);
  }

 private:
  double parse_real(const std::string& key) {
    const std::string& s = value(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw InvalidConfig(key + ": not a number: " + s);
    }
  }

  const std::string& value(const std::string& key) {
    return cfg_.values().at(key);
  }

  const FlatConfig& cfg_;
  mutable std::vector<std::string> seen_;
};

inline codec::Codec parse_codec(const std::string& name,
                                const std::string& key) {
  const auto c = codec::codec_from_string(name);
  if (!c) throw InvalidConfig(key + ": unknown codec: " + name);
  return *c;
}

}  // namespace detail

/// Downlink pairing used when `codec.downlink = auto`: codecs the system
/// runs on both links keep themselves; uplink-only codecs fall back to no
/// downlink compression.
inline codec::Codec auto_downlink(codec::Codec uplink) {
  switch (uplink) {
    case codec::Codec::mucsc:
    case codec::Codec::bmucsc:
    case codec::Codec::signsgd:
    case codec::Codec::stc:
      return uplink;
    default:
      return codec::Codec::dense;
  }
}

inline sim::ExperimentConfig to_experiment_config(const FlatConfig& cfg) {
  detail::Binder bind(cfg);
  sim::ExperimentConfig ec;

  ec.seed = static_cast<std::uint64_t>(bind.integer("seed", 1));
  ec.n_clients = static_cast<int>(bind.integer("fl.clients", 100));
  ec.participants = static_cast<int>(bind.integer("fl.participants", 10));
  ec.local_iters = static_cast<int>(bind.integer("fl.local_iters", 5));
  ec.batch = static_cast<int>(bind.integer("fl.batch", 8));
  ec.total_iters = static_cast<int>(bind.integer("fl.total_iters", 500));
  ec.target_accuracy = bind.real("fl.target_accuracy", -1.0);

  const std::string part = bind.text("fl.participation", "partial");
  if (part == "full")
    ec.participation = sim::Participation::full;
  else if (part == "partial")
    ec.participation = sim::Participation::partial;
  else
    throw InvalidConfig("fl.participation: full or partial, got " + part);

  const std::string agg = bind.text(
      "fl.aggregation", part == "full" ? "full-weighted" : "partial-mean");
  if (agg == "full-weighted")
    ec.aggregation = sim::Aggregation::full_weighted;
  else if (agg == "partial-mean")
    ec.aggregation = sim::Aggregation::partial_mean;
  else
    throw InvalidConfig("fl.aggregation: full-weighted or partial-mean");

  ec.lr.base = bind.real("lr.base", 0.5);
  ec.lr.decay_t = bind.real("lr.decay_t", 400.0);
  ec.lr.floor = bind.real("lr.floor", 0.01);
  ec.lr.scale = bind.real("lr.scale", 1.0);

  auto codec_common = [&](codec::CodecConfig& cc) {
    cc.em.iters = static_cast<int>(bind.integer("codec.em_iters", 5));
    cc.em.alpha = bind.real("codec.em_alpha", 1e-3);
    cc.em.decay = bind.real("codec.em_decay", 10.0);
    cc.bmucsc_fraction = bind.real("codec.bmucsc_fraction", 0.01);
    cc.stc_fraction = bind.real("codec.stc_fraction", 0.03);
    cc.dgc_fraction = bind.real("codec.dgc_fraction", 0.01);
    cc.qsgd_bits = static_cast<int>(bind.integer("codec.qsgd_bits", 4));
  };
  ec.uplink.kind =
      detail::parse_codec(bind.text("codec.uplink", "none"), "codec.uplink");
  codec_common(ec.uplink);
  ec.uplink.em.z = static_cast<int>(bind.integer("codec.z_up", 16));
  if (ec.uplink.kind == codec::Codec::bmucsc)
    ec.uplink.em.z = static_cast<int>(bind.integer("codec.z_up", 256));

  const std::string down = bind.text("codec.downlink", "auto");
  ec.downlink.kind = down == "auto" ? auto_downlink(ec.uplink.kind)
                                    : detail::parse_codec(down, "codec.downlink");
  codec_common(ec.downlink);
  ec.downlink.em.z = static_cast<int>(bind.integer("codec.z_down", 16));
  if (ec.downlink.kind == codec::Codec::bmucsc)
    ec.downlink.em.z = static_cast<int>(bind.integer("codec.z_down", 256));
  ec.hetero_z_up = bind.boolean("codec.z_up_hetero", false);

  ec.link.mean_bps = bind.real("net.mean_bps", 1.4e6);
  ec.link.std_fraction = bind.real("net.std_fraction", 0.10);
  ec.link.floor_bps = bind.real("net.floor_bps", ec.link.mean_bps / 10.0);

  const std::string task = bind.text("task.kind", "synthetic");
  if (task == "synthetic")
    ec.task.kind = sim::TaskConfig::Kind::synthetic;
  else if (task == "csv")
    ec.task.kind = sim::TaskConfig::Kind::csv;
  else
    throw InvalidConfig("task.kind: synthetic or csv, got " + task);
  const std::string model = bind.text("task.model", "logistic");
  if (model == "logistic")
    ec.task.model = tasks::Model::Kind::logistic;
  else if (model == "mlp")
    ec.task.model = tasks::Model::Kind::mlp;
  else
    throw InvalidConfig("task.model: logistic or mlp, got " + model);
  ec.task.features = static_cast<std::size_t>(bind.integer("task.features", 10));
  ec.task.classes = static_cast<std::size_t>(bind.integer("task.classes", 2));
  ec.task.train_samples =
      static_cast<std::size_t>(bind.integer("task.train_samples", 2000));
  ec.task.test_samples =
      static_cast<std::size_t>(bind.integer("task.test_samples", 1000));
  ec.task.separation = bind.real("task.separation", 4.0);
  ec.task.hidden = static_cast<std::size_t>(bind.integer("task.hidden", 16));
  ec.task.l2 = bind.real("task.l2", 1e-3);
  ec.task.csv_train = bind.text("task.csv_train", "");
  ec.task.csv_test = bind.text("task.csv_test", "");

  const std::string pmode = bind.text("partition.mode", "iid");
  if (pmode == "iid")
    ec.partition.mode = tasks::PartitionSpec::Mode::iid;
  else if (pmode == "noniid")
    ec.partition.mode = tasks::PartitionSpec::Mode::noniid;
  else
    throw InvalidConfig("partition.mode: iid or noniid, got " + pmode);
  ec.partition.min_samples =
      static_cast<int>(bind.integer("partition.min_samples", 300));
  ec.partition.max_samples =
      static_cast<int>(bind.integer("partition.max_samples", 500));
  ec.partition.classes_per_client =
      static_cast<int>(bind.integer("partition.classes_per_client", 5));

  // keys consumed elsewhere (verify-rates, run naming) but part of the schema
  bind.text("run.name", "experiment");
  bind.integer("rates.d", 1000000);
  bind.real("rates.h", 4.0);

  bind.reject_unknown();
  ec.validate();
  return ec;
}

}  // namespace fedclust::cli
