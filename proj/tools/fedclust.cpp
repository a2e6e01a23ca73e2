// Experiment runner for the federated-learning compression simulator.
//
//   fedclust run --config base.cfg --set codec.uplink=mucsc --out runs/
//   fedclust run --config base.cfg --sweep codec.uplink=mucsc,qsgd,none
//   fedclust verify-rates --config base.cfg
//
// Each run writes rounds.csv (one row per aggregation round), summary.json
// and manifest.json into its own directory. Reruns into a directory holding
// the same manifest hash are refused unless --force is given.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedclust/config.hpp"
#include "fedclust/fedsim.hpp"
#include "fedclust/payload.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedclust;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void fail(const std::string& message) {
  json err;
  err["error"] = {{"message", message}};
  std::cerr << err.dump() << "\n";
  std::exit(1);
}

cli::FlatConfig load_config(const std::string& path,
                            const std::vector<std::string>& sets) {
  cli::FlatConfig cfg =
      path.empty() ? cli::FlatConfig{} : cli::FlatConfig::parse_file(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidConfig("--set expects key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::string default_out_dir() {
  if (const char* env = std::getenv("FEDCLUST_OUT")) return env;
  return "runs";
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == '.' || c == '/' || c == '=' || c == ' ') c = '_';
  return s;
}

struct RunResult {
  std::string name;
  sim::Summary summary;
  double measured_rate = 0.0;
  std::string hash;
};

RunResult execute_run(const cli::FlatConfig& cfg, const std::string& name,
                      const fs::path& out_dir, bool force) {
  const sim::ExperimentConfig ec = cli::to_experiment_config(cfg);
  const std::string hash = cfg.manifest_hash();
  const fs::path dir = out_dir / name;

  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path) && !force) {
    std::ifstream in(manifest_path);
    json old = json::parse(in, nullptr, false);
    if (!old.is_discarded() && old.value("config_hash", "") == hash)
      throw InvalidConfig("refusing rerun of identical manifest " + hash +
                          " into " + dir.string() + " (use --force)");
    throw InvalidConfig(dir.string() +
                        " already holds a different experiment (use --force)");
  }
  fs::create_directories(dir);

  sim::Simulation simulation(ec);
  const auto reports = simulation.run();
  const sim::Summary summary = sim::Simulation::summarize(reports);

  {
    std::ofstream csv(dir / "rounds.csv", std::ios::binary);
    csv << "round,loss,accuracy,up_bytes,down_bytes,comm_s,comp_s\n";
    for (const auto& r : reports)
      csv << r.round << ',' << fmt(r.loss) << ',' << fmt(r.accuracy) << ','
          << r.uplink_bytes << ',' << r.downlink_bytes << ','
          << fmt(r.comm_seconds) << ',' << fmt(r.comp_seconds) << '\n';
  }
  {
    std::ofstream csv(dir / "traffic.csv", std::ios::binary);
    simulation.ledger().write_csv(csv);
  }

  double rate = 1.0;
  if (!reports.empty()) {
    const double hd = 4.0 * static_cast<double>(simulation.model().dim());
    rate = payload::measured_rate(simulation.ledger(), 2.0 * hd,
                                  ec.participants, ec.n_clients);
  }

  json manifest;
  manifest["experiment"] = name;
  manifest["config_hash"] = hash;
  manifest["output_dir"] = dir.string();
  json resolved;
  for (const auto& [k, v] : cfg.values()) resolved[k] = v;
  manifest["config"] = resolved;
  std::ofstream(manifest_path) << manifest.dump(2) << "\n";

  json out;
  out["experiment"] = name;
  out["config_hash"] = hash;
  out["rounds_run"] = summary.rounds_run;
  out["final_loss"] = summary.final_loss;
  out["final_accuracy"] = summary.final_accuracy;
  out["uplink_bytes"] = summary.uplink_bytes;
  out["downlink_bytes"] = summary.downlink_bytes;
  out["total_bytes"] = summary.uplink_bytes + summary.downlink_bytes;
  out["comm_seconds"] = summary.comm_seconds;
  out["comp_seconds"] = summary.comp_seconds;
  out["measured_rate"] = rate;
  out["target_accuracy"] = ec.target_accuracy;
  out["target_reached"] = summary.target_reached;
  std::ofstream(dir / "summary.json") << out.dump(2) << "\n";

  return {name, summary, rate, hash};
}

int cmd_run(const std::string& config_path, std::vector<std::string> sets,
            const std::string& sweep, const std::string& out,
            std::int64_t seed_override, bool has_seed, bool force) {
  if (has_seed) sets.push_back("seed=" + std::to_string(seed_override));
  const cli::FlatConfig base = load_config(config_path, sets);
  const fs::path out_dir = out.empty() ? default_out_dir() : out;

  std::vector<std::pair<std::string, cli::FlatConfig>> runs;
  if (sweep.empty()) {
    runs.emplace_back(base.get("run.name", "experiment"), base);
  } else {
    const auto eq = sweep.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("--sweep expects key=v1,v2,...");
    const std::string key = sweep.substr(0, eq);
    std::stringstream ss(sweep.substr(eq + 1));
    std::string value;
    while (std::getline(ss, value, ',')) {
      cli::FlatConfig cfg = base;
      cfg.set(key, value);
      runs.emplace_back(base.get("run.name", "experiment") + "__" +
                            sanitize(key) + "_" + sanitize(value),
                        cfg);
    }
    if (runs.empty()) throw InvalidConfig("--sweep has no values");
  }

  std::vector<RunResult> results;
  for (const auto& [name, cfg] : runs) {
    std::cout << "running " << name << " ..." << std::flush;
    results.push_back(execute_run(cfg, name, out_dir, force));
    const auto& r = results.back();
    std::cout << " done (rounds=" << r.summary.rounds_run
              << " loss=" << fmt(r.summary.final_loss)
              << " acc=" << fmt(r.summary.final_accuracy)
              << " rate=" << fmt(r.measured_rate) << ")\n";
  }

  if (results.size() > 1) {
    std::ofstream cmp(out_dir / "comparison.csv", std::ios::binary);
    cmp << "experiment,rounds,final_loss,final_accuracy,up_bytes,down_bytes,"
           "comm_s,comp_s,measured_rate,target_reached\n";
    for (const auto& r : results)
      cmp << r.name << ',' << r.summary.rounds_run << ','
          << fmt(r.summary.final_loss) << ',' << fmt(r.summary.final_accuracy)
          << ',' << r.summary.uplink_bytes << ',' << r.summary.downlink_bytes
          << ',' << fmt(r.summary.comm_seconds) << ','
          << fmt(r.summary.comp_seconds) << ',' << fmt(r.measured_rate) << ','
          << (r.summary.target_reached ? 1 : 0) << '\n';
    std::cout << "comparison table: " << (out_dir / "comparison.csv").string()
              << "\n";
  }
  return 0;
}

struct RateRow {
  std::string name;
  double formula;
  double measured;
  double table;
  double tolerance;
};

int cmd_verify_rates(const std::string& config_path,
                     const std::vector<std::string>& sets) {
  const cli::FlatConfig cfg = load_config(config_path, sets);
  const sim::ExperimentConfig ec = cli::to_experiment_config(cfg);
  const auto d = static_cast<std::uint64_t>(
      std::stoll(cfg.get("rates.d", "1000000")));
  const double h = std::stod(cfg.get("rates.h", "4"));
  const int k = ec.participants, n = ec.n_clients;
  const int z_u = std::stoi(cfg.get("codec.z_up", "16"));
  const int z_d = std::stoi(cfg.get("codec.z_down", "16"));
  if (z_u < 2 || z_d < 2)
    throw InvalidConfig("verify-rates needs z_up, z_down >= 2");

  codec::CodecConfig cc;
  cc.bmucsc_fraction = ec.uplink.bmucsc_fraction;
  cc.stc_fraction = ec.uplink.stc_fraction;
  cc.dgc_fraction = ec.uplink.dgc_fraction;
  cc.qsgd_bits = ec.uplink.qsgd_bits;

  Rng rng = make_stream(ec.seed, "rates");
  std::vector<double> u(d);
  for (auto& v : u) v = standard_normal(rng);

  auto payload_bytes = [&](codec::Codec kind, int z) {
    codec::CodecConfig c = cc;
    c.kind = kind;
    c.em.z = z;
    codec::ResidualState residual(d);
    return static_cast<double>(
        payload::encode(codec::compress(c, u, rng, &residual)).size());
  };
  const double dense_bytes = payload_bytes(codec::Codec::dense, 2);
  auto measured = [&](double up, double down) {
    return 2.0 * h * static_cast<double>(d) /
           (up * (static_cast<double>(k) / n) + down);
  };

  const auto d0_b = static_cast<std::uint64_t>(std::llround(
      cc.bmucsc_fraction * static_cast<double>(d)));
  const auto d0_stc = static_cast<std::uint64_t>(std::llround(
      cc.stc_fraction * static_cast<double>(d)));
  const auto d0_dgc = static_cast<std::uint64_t>(std::llround(
      cc.dgc_fraction * static_cast<double>(d)));

  std::vector<RateRow> rows;
  {
    const double b = payload_bytes(codec::Codec::mucsc, z_u);
    const double b_dn = payload_bytes(codec::Codec::mucsc, z_d);
    rows.push_back({"mucsc", payload::rate_mucsc(d, z_u, z_d, k, n, h),
                    measured(b, b_dn), 14.54, 0.02});
  }
  rows.push_back({"qsgd", payload::rate_qsgd(d, cc.qsgd_bits, k, n, h),
                  measured(payload_bytes(codec::Codec::qsgd, z_u), dense_bytes),
                  1.98, 0.02});
  {
    const double b = payload_bytes(codec::Codec::signsgd, z_u);
    rows.push_back({"signsgd", payload::rate_signsgd(d, k, n, h),
                    measured(b, b), 58.18, 0.02});
  }
  {
    const double b = payload_bytes(codec::Codec::dgc, z_u);
    rows.push_back({"dgc", payload::rate_dgc(d, d0_dgc, k, n, h),
                    measured(b, dense_bytes), 1.99, 0.02});
  }
  {
    const double b = payload_bytes(codec::Codec::stc, z_u);
    rows.push_back({"stc", payload::rate_stc(d, d0_stc, k, n, h),
                    measured(b, b), 88.15, 0.02});
  }
  {
    const int z = std::stoi(cfg.get("codec.z_up", "256"));
    const double b = payload_bytes(codec::Codec::bmucsc, z);
    rows.push_back({"bmucsc", payload::rate_bmucsc(d, d0_b, z, z, k, n, h),
                    measured(b, b), 196.6, 0.03});
  }

  std::printf("d=%llu h=%g K=%d N=%d Z_U=%d Z_D=%d\n",
              static_cast<unsigned long long>(d), h, k, n, z_u, z_d);
  std::printf("%-8s %10s %10s %10s %6s  %s\n", "codec", "formula", "measured",
              "table", "tol", "status");
  bool all_ok = true;
  for (const auto& r : rows) {
    const bool ok = std::fabs(r.measured - r.table) <= r.tolerance * r.table;
    all_ok = all_ok && ok;
    std::printf("%-8s %10.3f %10.3f %10.2f %5.0f%%  %s\n", r.name.c_str(),
                r.formula, r.measured, r.table, r.tolerance * 100,
                ok ? "PASS" : "FAIL");
  }
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated-learning update-compression simulator"};
  app.require_subcommand(1);

  std::string config_path, sweep, out;
  std::vector<std::string> sets;
  std::int64_t seed = 0;
  bool force = false;

  auto* run = app.add_subcommand("run", "run one experiment or a sweep");
  run->add_option("--config", config_path, "config file (key = value)");
  run->add_option("--set", sets, "override, e.g. --set codec.uplink=mucsc");
  run->add_option("--sweep", sweep, "sweep one key, e.g. k=v1,v2");
  run->add_option("--out", out, "output root (default $FEDCLUST_OUT or runs)");
  auto* seed_opt = run->add_option("--seed", seed, "override the master seed");
  run->add_flag("--force", force, "overwrite an existing run directory");

  auto* verify =
      app.add_subcommand("verify-rates", "compare formula and measured rates");
  verify->add_option("--config", config_path, "config file (key = value)");
  verify->add_option("--set", sets, "override, e.g. --set rates.d=1000000");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, sets, sweep, out, seed, !seed_opt->empty(),
                     force);
    return cmd_verify_rates(config_path, sets);
  } catch (const std::exception& e) {
    fail(e.what());
  }
  return 1;
}
