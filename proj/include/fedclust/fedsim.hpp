#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fedclust/codec.hpp"
#include "fedclust/errors.hpp"
#include "fedclust/netmodel.hpp"
#include "fedclust/payload.hpp"
#include "fedclust/rng.hpp"
#include "fedclust/tasks.hpp"

namespace fedclust::sim {

using codec::UpdateVector;

struct LrSchedule {
  double base = 0.5;
  double decay_t = 400.0;
  double floor = 0.01;
  double scale = 1.0;

  double at(int t) const {
    return scale * std::max(base / (1.0 + static_cast<double>(t) / decay_t),
                            floor);
  }
};

enum class Participation { full, partial };
enum class Aggregation { full_weighted, partial_mean };

struct TaskConfig {
  enum class Kind { synthetic, csv };
  Kind kind = Kind::synthetic;
  tasks::Model::Kind model = tasks::Model::Kind::logistic;
  std::size_t features = 10;
  std::size_t classes = 2;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 1000;
  double separation = 4.0;
  std::size_t hidden = 16;
  double l2 = 1e-3;
  std::string csv_train;
  std::string csv_test;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int n_clients = 100;      // N
  int participants = 10;    // K
  int local_iters = 5;      // E
  int batch = 8;            // B
  int total_iters = 500;    // T, a multiple of E
  Participation participation = Participation::partial;
  Aggregation aggregation = Aggregation::partial_mean;
  LrSchedule lr{};
  codec::CodecConfig uplink{};
  codec::CodecConfig downlink{};
  bool hetero_z_up = false;        // round-robin Z_U in {4, 8, 16}
  double target_accuracy = -1.0;   // early stop when > 0
  net::LinkModel link{};
  TaskConfig task{};
  tasks::PartitionSpec partition{};

  void validate() const {
    if (n_clients < 1 || participants < 1 || participants > n_clients)
      throw InvalidConfig("need 1 <= K <= N");
    if (local_iters < 1 || batch < 1)
      throw InvalidConfig("need E >= 1 and B >= 1");
    if (total_iters < 0 || total_iters % local_iters != 0)
      throw InvalidConfig("T must be a nonnegative multiple of E");
    if (downlink.kind == codec::Codec::qsgd ||
        downlink.kind == codec::Codec::dgc)
      throw InvalidConfig(codec::to_string(downlink.kind) +
                          " compresses uplink only");
    if (target_accuracy > 1.0)
      throw InvalidConfig("target accuracy above 1");
    if (!link.valid()) throw InvalidConfig("bad link model");
    for (const auto& cc : {uplink, downlink}) {
      const bool clustering =
          cc.kind == codec::Codec::mucsc || cc.kind == codec::Codec::bmucsc;
      if (clustering && !cc.em.valid())
        throw InvalidConfig("clustering codecs need z >= 2 and a valid "
                            "fitting schedule");
      if (cc.kind == codec::Codec::qsgd &&
          (cc.qsgd_bits < 1 || cc.qsgd_bits > 16))
        throw InvalidConfig("qsgd bit width out of range");
      const double fraction = cc.kind == codec::Codec::bmucsc ? cc.bmucsc_fraction
                              : cc.kind == codec::Codec::stc  ? cc.stc_fraction
                              : cc.kind == codec::Codec::dgc  ? cc.dgc_fraction
                                                              : 0.5;
      if (!(fraction > 0.0 && fraction <= 1.0))
        throw InvalidConfig("selection fraction must be in (0, 1]");
    }
  }
};

struct RoundReport {
  int round = 0;  // 1-based aggregation round
  double loss = 0.0;
  double accuracy = 0.0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double comm_seconds = 0.0;
  double comp_seconds = 0.0;  // wall clock of training + codec work
  bool target_reached = false;
};

struct Summary {
  int rounds_run = 0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double comm_seconds = 0.0;
  double comp_seconds = 0.0;
  bool target_reached = false;
};

/// E local SGD steps from w_start on minibatches drawn uniformly with
/// replacement; returns the update U = w_start - w_end. The caller's stored
/// model is untouched (the authoritative state comes back via the downlink).
inline UpdateVector local_train(const tasks::Model& model,
                                std::span<const double> w_start,
                                const tasks::Dataset& ds,
                                std::span<const std::uint32_t> shard,
                                int local_iters, int batch_size,
                                const LrSchedule& lr, int t0, Rng& rng) {
  if (shard.empty()) throw EmptyShard("client shard is empty");
  std::vector<double> w(w_start.begin(), w_start.end());
  std::vector<double> grad(w.size());
  std::vector<std::uint32_t> batch(batch_size);
  for (int j = 0; j < local_iters; ++j) {
    for (auto& idx : batch)
      idx = shard[uniform_below(rng, shard.size())];
    tasks::loss_and_grad(model, w, ds, batch, grad);
    const double eta = lr.at(t0 + j);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= eta * grad[k];
  }
  UpdateVector u(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) u[k] = w_start[k] - w[k];
  return u;
}

/// K independent draws with replacement, P(draw = i) = weights[i].
inline std::vector<int> sample_participants(std::span<const double> weights,
                                            int k, Rng& rng) {
  if (weights.empty() || k < 1) throw InvalidParams("need weights and k >= 1");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidWeights("negative weight");
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw InvalidWeights("weights must sum to 1");
  std::vector<int> draws(k);
  for (auto& draw : draws) {
    const double u = uniform01(rng) * sum;
    double acc = 0.0;
    int pick = static_cast<int>(weights.size()) - 1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) {
        pick = static_cast<int>(i);
        break;
      }
    }
    draw = pick;
  }
  return draws;
}

struct ClientUpdate {
  int client_id = 0;
  std::size_t multiplicity = 1;  // draw count under with-replacement sampling
  double shard_size = 0.0;
  UpdateVector update;
};

/// Combines decompressed client updates. Entries must be sorted by client id
/// (aggregation is a barrier whose result may not depend on execution order).
///
/// full_weighted: sum of |S_i|/sum|S_j| * U_i over the entries.
/// partial_mean: (1/K) * sum over the sampled multiset, duplicates counted by
/// multiplicity (one multiply, not repeated addition).
inline UpdateVector aggregate(const std::vector<ClientUpdate>& updates,
                              Aggregation mode, int k) {
  if (updates.empty()) throw InvalidParams("no updates to aggregate");
  const std::size_t d = updates.front().update.size();
  for (const auto& e : updates)
    if (e.update.size() != d) throw DimensionMismatch("update dimensions");

  UpdateVector out(d, 0.0);
  if (mode == Aggregation::full_weighted) {
    double total = 0.0;
    for (const auto& e : updates) total += e.shard_size;
    for (const auto& e : updates) {
      const double p = e.shard_size / total;
      for (std::size_t m = 0; m < d; ++m) out[m] += p * e.update[m];
    }
  } else {
    for (const auto& e : updates) {
      const double mult = static_cast<double>(e.multiplicity);
      for (std::size_t m = 0; m < d; ++m) out[m] += mult * e.update[m];
    }
    for (std::size_t m = 0; m < d; ++m) out[m] /= static_cast<double>(k);
  }
  return out;
}

struct ClientState {
  int id = 0;
  double weight = 0.0;  // p_i, shard-size share of the total
  std::vector<std::uint32_t> shard;
  std::vector<double> model;
  codec::CodecConfig uplink{};
  codec::ResidualState residual{0};
  Rng batch_rng;
  Rng codec_rng;
};

/// FedAvg with pluggable update compression on both links. One master seed
/// fans out into named streams (participation, per-client batching and codec
/// draws, server codec, link speeds) so toggling one randomness source leaves
/// the others untouched, and a fixed seed reproduces the trajectory exactly.
class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_task();
    build_clients();
    participation_rng_ = make_stream(cfg_.seed, "participation");
    server_codec_rng_ = make_stream(cfg_.seed, "codec.server");
    net_rng_ = make_stream(cfg_.seed, "net");
    server_residual_ = codec::ResidualState(model_.dim());
  }

  int rounds_total() const { return cfg_.total_iters / cfg_.local_iters; }

  RoundReport run_round() {
    using clock = std::chrono::steady_clock;
    const int t0 = round_ * cfg_.local_iters;
    RoundReport report;
    report.round = round_ + 1;

    std::map<int, std::size_t> multiplicity;
    if (cfg_.participation == Participation::full) {
      for (const auto& cl : clients_) multiplicity[cl.id] = 1;
    } else {
      for (int id : sample_participants(weights_, cfg_.participants,
                                        participation_rng_))
        multiplicity[id] += 1;
    }

    double comp = 0.0;
    std::vector<ClientUpdate> updates;
    std::vector<std::uint64_t> up_bytes;
    std::vector<double> up_speeds;
    const auto speeds = net::sample_speeds(
        cfg_.link, cfg_.n_clients, net_rng_);

    for (const auto& [id, mult] : multiplicity) {  // ascending client id
      auto& cl = clients_[id];
      const auto begin = clock::now();
      UpdateVector u =
          local_train(model_, cl.model, train_, cl.shard, cfg_.local_iters,
                      cfg_.batch, cfg_.lr, t0, cl.batch_rng);
      const codec::CompressedUpdate c =
          codec::compress(cl.uplink, u, cl.codec_rng, &cl.residual);
      UpdateVector decoded = codec::decompress(c);
      comp += std::chrono::duration<double>(clock::now() - begin).count();

      const std::uint64_t bytes = payload::encode(c).size();
      ledger_.record(round_, id, payload::Direction::uplink, bytes);
      report.uplink_bytes += bytes;
      up_bytes.push_back(bytes);
      up_speeds.push_back(speeds[id]);
      updates.push_back({id, mult, static_cast<double>(cl.shard.size()),
                         std::move(decoded)});
    }

    const auto agg_begin = clock::now();
    const int draw_count = cfg_.participation == Participation::full
                               ? cfg_.n_clients
                               : cfg_.participants;
    UpdateVector aggregated = aggregate(updates, cfg_.aggregation, draw_count);
    const codec::CompressedUpdate broadcast = codec::compress(
        cfg_.downlink, aggregated, server_codec_rng_, &server_residual_);
    const UpdateVector applied = codec::decompress(broadcast);
    comp += std::chrono::duration<double>(clock::now() - agg_begin).count();

    const std::uint64_t down_bytes = payload::encode(broadcast).size();
    for (const auto& cl : clients_) {
      ledger_.record(round_, cl.id, payload::Direction::downlink, down_bytes);
      report.downlink_bytes += down_bytes;
    }

    // Everyone, training or not, applies the same broadcast: w_t = w_{t-E} - D
    for (auto& cl : clients_)
      for (std::size_t m = 0; m < applied.size(); ++m)
        cl.model[m] -= applied[m];
    for (std::size_t m = 0; m < applied.size(); ++m)
      server_model_[m] -= applied[m];

    const std::vector<std::uint64_t> down_all(clients_.size(), down_bytes);
    report.comm_seconds =
        net::round_time(up_bytes, up_speeds, down_all, speeds);
    report.comp_seconds = comp;

    const auto [loss, acc] = tasks::evaluate(model_, server_model_, test_);
    report.loss = loss;
    report.accuracy = acc;
    if (cfg_.target_accuracy > 0 && acc >= cfg_.target_accuracy) {
      report.target_reached = true;
      target_reached_ = true;
    }
    ++round_;
    return report;
  }

  /// Runs T/E rounds, stopping early once the target accuracy is reached.
  std::vector<RoundReport> run() {
    std::vector<RoundReport> reports;
    reports.reserve(rounds_total());
    for (int r = 0; r < rounds_total(); ++r) {
      reports.push_back(run_round());
      if (reports.back().target_reached) break;
    }
    return reports;
  }

  static Summary summarize(const std::vector<RoundReport>& reports) {
    Summary s;
    s.rounds_run = static_cast<int>(reports.size());
    for (const auto& r : reports) {
      s.uplink_bytes += r.uplink_bytes;
      s.downlink_bytes += r.downlink_bytes;
      s.comm_seconds += r.comm_seconds;
      s.comp_seconds += r.comp_seconds;
    }
    if (!reports.empty()) {
      s.final_loss = reports.back().loss;
      s.final_accuracy = reports.back().accuracy;
      s.target_reached = reports.back().target_reached;
    }
    return s;
  }

  const ExperimentConfig& config() const { return cfg_; }
  const payload::TrafficLedger& ledger() const { return ledger_; }
  const tasks::Model& model() const { return model_; }
  const tasks::Dataset& train_set() const { return train_; }
  const tasks::Dataset& test_set() const { return test_; }
  const std::vector<double>& server_model() const { return server_model_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  const std::vector<double>& weights() const { return weights_; }
  bool target_reached() const { return target_reached_; }

 private:
  void build_task() {
    if (cfg_.task.kind == TaskConfig::Kind::synthetic) {
      Rng train_rng = make_stream(cfg_.seed, "data.train");
      Rng test_rng = make_stream(cfg_.seed, "data.test");
      train_ = tasks::gen_synthetic(cfg_.task.train_samples,
                                    cfg_.task.features, cfg_.task.classes,
                                    cfg_.task.separation, train_rng);
      test_ = tasks::gen_synthetic(cfg_.task.test_samples, cfg_.task.features,
                                   cfg_.task.classes, cfg_.task.separation,
                                   test_rng);
    } else {
      train_ = tasks::load_csv(cfg_.task.csv_train);
      test_ = tasks::load_csv(cfg_.task.csv_test);
      if (train_.f != test_.f) throw InvalidConfig("train/test csv disagree");
      train_.c = test_.c = std::max(train_.c, test_.c);
    }
    model_.kind = cfg_.task.model;
    model_.features = train_.f;
    model_.classes = train_.c;
    model_.hidden = cfg_.task.hidden;
    model_.l2 = cfg_.task.l2;

    server_model_.assign(model_.dim(), 0.0);
    if (model_.kind == tasks::Model::Kind::mlp) {
      Rng init_rng = make_stream(cfg_.seed, "init");
      const double bound = std::sqrt(
          6.0 / static_cast<double>(model_.features + model_.hidden));
      for (auto& v : server_model_)
        v = (2.0 * uniform01(init_rng) - 1.0) * bound;
    }
  }

  void build_clients() {
    Rng part_rng = make_stream(cfg_.seed, "partition");
    auto shards =
        tasks::partition(train_, cfg_.partition, cfg_.n_clients, part_rng);
    double total = 0.0;
    for (const auto& s : shards) total += static_cast<double>(s.size());

    clients_.resize(cfg_.n_clients);
    weights_.resize(cfg_.n_clients);
    static constexpr int kHeteroZ[3] = {4, 8, 16};
    for (int i = 0; i < cfg_.n_clients; ++i) {
      auto& cl = clients_[i];
      cl.id = i;
      cl.shard = std::move(shards[i]);
      cl.weight = static_cast<double>(cl.shard.size()) / total;
      cl.model = server_model_;
      cl.uplink = cfg_.uplink;
      if (cfg_.hetero_z_up) cl.uplink.em.z = kHeteroZ[i % 3];
      if (cl.uplink.needs_residual())
        cl.residual = codec::ResidualState(model_.dim());
      cl.batch_rng = make_stream(cfg_.seed, "batch", i);
      cl.codec_rng = make_stream(cfg_.seed, "codec.client", i);
      weights_[i] = cl.weight;
    }
  }

  ExperimentConfig cfg_;
  tasks::Dataset train_, test_;
  tasks::Model model_;
  std::vector<ClientState> clients_;
  std::vector<double> weights_;
  std::vector<double> server_model_;
  payload::TrafficLedger ledger_;
  codec::ResidualState server_residual_{0};
  Rng participation_rng_, server_codec_rng_, net_rng_;
  int round_ = 0;
  bool target_reached_ = false;
};

}  // namespace fedclust::sim
