// mgse: simulate the microgrid scenario, run the decentralized estimators and
// report the metrics.
//
// Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "mgse/estimation.hpp"
#include "mgse/scenario.hpp"
#include "mgse/sim.hpp"
#include "mgse/trace_io.hpp"

namespace fs = std::filesystem;
using namespace mgse;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<double> event_time;
  std::optional<std::string> discretization;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory (overrides output.directory)");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--duration", o.duration, "Simulated time in seconds");
  cmd->add_option("--event-time", o.event_time, "Time of the first load event in seconds");
  cmd->add_option("--discretization", o.discretization, "Estimator model discretization")
      ->check(CLI::IsMember({"euler", "exact"}));
}

ScenarioConfig load(const CommonOptions& o) {
  auto cfg = load_scenario(o.config);
  ScenarioOverrides ov;
  ov.seed = o.seed;
  ov.duration = o.duration;
  ov.event_time = o.event_time;
  if (o.discretization) ov.method = parse_discretization(*o.discretization);
  if (!o.out.empty()) ov.output_directory = fs::path(o.out);
  apply_overrides(cfg, ov);
  return cfg;
}

fs::path prepare_output(const ScenarioConfig& cfg) {
  fs::create_directories(cfg.output_directory);
  return cfg.output_directory;
}

void simulate(const ScenarioConfig& cfg) {
  const auto dir = prepare_output(cfg);
  const auto trace = run_plant(cfg.sim);
  write_csv_file(dir / "truth.csv", truth_table(trace));
  write_csv_file(dir / "measurements.csv", measurement_table(trace));
  std::cout << "wrote " << trace.records.size() << " samples of " << trace.state_labels.size()
            << " states to " << dir.string() << "\n";
}

PlantTrace load_trace(const ScenarioConfig& cfg, const fs::path& truth_path,
                      const fs::path& meas_path) {
  const auto truth = read_csv_file(truth_path);
  const auto meas = read_csv_file(meas_path);
  const auto labels = plant_state_labels(cfg.sim.topology);
  auto trace = plant_trace_from_tables(truth, meas, labels.size());
  if (trace.state_labels != labels) {
    throw ConfigError("trace state columns do not match the scenario topology");
  }
  if (trace.records.size() >= 2 && std::abs(trace.step - cfg.sim.plant_step) > 1e-12) {
    throw ConfigError("trace sample period " + std::to_string(trace.step) +
                      " s does not match simulation.plant_step");
  }
  if (trace.records.size() < 2) trace.step = cfg.sim.plant_step;
  return trace;
}

void estimate(const ScenarioConfig& cfg, const fs::path& truth_path, const fs::path& meas_path,
              bool sequential) {
  const auto trace = load_trace(cfg, truth_path, meas_path);
  const auto dir = prepare_output(cfg);
  if (trace.records.empty()) {
    std::ofstream(dir / "metrics.json") << "{}\n";
    std::cout << "empty trace, nothing to estimate\n";
    return;
  }
  const auto result = run_decentralized(cfg.sim.topology, trace, cfg.estimation, !sequential);
  for (std::size_t i = 0; i < result.local.size(); ++i) {
    write_csv_file(dir / ("local_" + std::to_string(i + 1) + ".csv"),
                   estimate_table(result.local[i]));
  }
  if (!cfg.sim.topology.lines.empty()) {
    write_csv_file(dir / "global.csv", estimate_table(result.global));
  }
  const auto metrics = compute_metrics(cfg, trace, result);
  std::ofstream(dir / "metrics.json") << metrics_to_json(metrics).dump(2) << "\n";
  std::cout << format_report(metrics_to_json(metrics));
}

int report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  std::cout << format_report(doc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized dynamic state estimation for dq-frame microgrid models"};
  app.require_subcommand(1);

  CommonOptions sim_opts;
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate the plant and write truth/measurement CSVs");
  add_common(sim_cmd, sim_opts);

  CommonOptions est_opts;
  std::string truth_path, meas_path;
  bool sequential = false;
  auto* est_cmd = app.add_subcommand("estimate", "Run local and global estimators on a trace");
  add_common(est_cmd, est_opts);
  est_cmd->add_option("--truth", truth_path, "Truth CSV (default <out>/truth.csv)");
  est_cmd->add_option("--measurements", meas_path, "Measurement CSV (default <out>/measurements.csv)");
  est_cmd->add_flag("--sequential", sequential, "Run local estimators one after another");

  CommonOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "simulate followed by estimate");
  add_common(run_cmd, run_opts);

  std::string metrics_path;
  auto* report_cmd = app.add_subcommand("report", "Print a metrics file as a table");
  report_cmd->add_option("metrics", metrics_path, "metrics.json from estimate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*sim_cmd) {
      simulate(load(sim_opts));
    } else if (*est_cmd) {
      const auto cfg = load(est_opts);
      const fs::path truth = truth_path.empty() ? cfg.output_directory / "truth.csv" : fs::path(truth_path);
      const fs::path meas =
          meas_path.empty() ? cfg.output_directory / "measurements.csv" : fs::path(meas_path);
      estimate(cfg, truth, meas, sequential);
    } else if (*run_cmd) {
      const auto cfg = load(run_opts);
      simulate(cfg);
      estimate(cfg, cfg.output_directory / "truth.csv", cfg.output_directory / "measurements.csv",
               false);
    } else if (*report_cmd) {
      return report(metrics_path);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CsvError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
