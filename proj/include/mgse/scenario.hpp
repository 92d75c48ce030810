#pragma once

// Scenario files (JSON), command-line overrides, metrics and the text report used
// by the `mgse` tool.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgse/estimation.hpp"
#include "mgse/sim.hpp"

namespace mgse {

/// Parse or validation failure in a scenario or metrics file. Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioConfig {
  SimConfig sim;
  EstimatorSettings estimation;
  std::vector<TimeWindow> metric_windows;
  double recovery_window = 0.01;  // s
  double pre_event_window = 0.5;  // s
  std::filesystem::path output_directory = "out";

  /// Line-to-line RMS voltage rating as written in the file.
  double v_nominal_line_rms = 0.0;
  double frequency_hz = 0.0;
};

ScenarioConfig parse_scenario(const std::string& text, const std::string& source = "<config>");
ScenarioConfig load_scenario(const std::filesystem::path& path);

struct ScenarioOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<double> event_time;
  std::optional<DiscretizationMethod> method;
  std::optional<std::filesystem::path> output_directory;
};

/// Applies overrides and re-validates. Shortening the duration drops events that
/// fall after the new end time.
void apply_overrides(ScenarioConfig& cfg, const ScenarioOverrides& overrides);

/// Per-channel comparison of estimate and raw measurement against the truth.
struct ChannelMetrics {
  std::string estimator;
  std::string channel;
  std::vector<double> rmse_estimate;     // one per metric window
  std::vector<double> rmse_measurement;  // one per metric window
  std::optional<double> pre_event_rmse;
  std::vector<std::optional<double>> recovery_time;  // one per event
};

struct EstimatorMetrics {
  std::string name;
  int state_dim = 0;
  double nis = 0.0;
};

struct Metrics {
  std::vector<TimeWindow> windows;
  std::vector<double> event_times;
  std::vector<ChannelMetrics> channels;
  std::vector<EstimatorMetrics> estimators;
};

Metrics compute_metrics(const ScenarioConfig& cfg, const PlantTrace& trace,
                        const DecentralizedResult& result);

nlohmann::json metrics_to_json(const Metrics& m);

/// Human-readable summary of a metrics document. Throws ConfigError on a
/// structurally invalid document.
std::string format_report(const nlohmann::json& metrics);

}  // namespace mgse
