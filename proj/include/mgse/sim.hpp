#pragma once

// Ground-truth simulator for a droop/PI regulated microgrid.
//
// The coupled plant is integrated with exact (zero-order-hold) discretization at
// `plant_step`. At every step the regulator reads the true bus state, loads follow
// the event schedule, and the recorder stores the true state together with noisy
// copies of the state and of the per-DGU estimator inputs [v_t, i_o].

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgse/discretize.hpp"
#include "mgse/frames.hpp"
#include "mgse/kalman.hpp"
#include "mgse/models.hpp"

namespace mgse {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadEvent {
  double time = 0.0;  // s
  int bus = 1;
  DqSample load_delta;  // A
};

using EventSchedule = std::vector<LoadEvent>;

struct RegulatorGains {
  double kp = 0.1;                  // V/V
  double ki = 200.0;                // 1/s
  double virtual_resistance = 0.5;  // ohm, on the filter current
  double droop = 2.0;               // ohm, v_d reference drop per ampere of i_td
};

/// PI bus-voltage regulator producing the DGU terminal voltage:
///
///   e   = [v_ref - droop * i_td - v_d,  -v_q]
///   v_t = z + kp e - R_v i_t,    z <- z + ki dt e
///
/// The output magnitude is clamped to 2 v_ref; while clamped the integrator holds.
class VoltageRegulator {
 public:
  VoltageRegulator(RegulatorGains gains, double dt);

  /// Presets the integrator so that `terminal_voltage` is produced at zero error.
  void preset(const DqSample& terminal_voltage, const Vector& dgu_state);

  DqSample regulate_terminal_voltage(const Vector& dgu_state, double reference);

  [[nodiscard]] const DqSample& integrator() const { return integrator_; }
  [[nodiscard]] const RegulatorGains& gains() const { return gains_; }

 private:
  RegulatorGains gains_;
  double dt_;
  DqSample integrator_;
};

struct SimConfig {
  MicrogridTopology topology;
  double duration = 4.0;     // s
  double plant_step = 1e-4;  // s
  std::uint64_t seed = 1;
  EventSchedule events;
  std::vector<DqSample> initial_loads;  // one per bus
  std::vector<NoiseSpec> dgu_noise;     // one per bus: 4x4 q, r, m
  NoiseSpec line_noise;                 // 2x2 q, r; m unused

  double v_reference = 0.0;  // phase peak volts
  RegulatorGains gains;

  /// When set, the regulator is bypassed and terminal voltages are held here
  /// (stacked d/q per bus).
  std::optional<Vector> fixed_terminal_voltages;
  /// Defaults to the regulated operating point (or the open-loop equilibrium with
  /// fixed terminal voltages).
  std::optional<Vector> initial_state;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct TraceRecord {
  double t = 0.0;
  Vector true_state;
  Vector noisy_measurement;
  Vector true_inputs;      // per bus [v_td, v_tq, i_od, i_oq]
  Vector measured_inputs;  // true_inputs + input noise
};

struct PlantTrace {
  double step = 0.0;  // s between records
  std::vector<std::string> state_labels;
  std::vector<std::string> input_labels;
  std::vector<TraceRecord> records;
};

/// Phase peak voltage for a line-to-line RMS rating.
double phase_peak_from_line_rms(double v_line_rms);

/// Noise covariances of the whole plant state (block diagonal of the per-DGU and
/// per-line blocks).
Matrix plant_process_noise(const SimConfig& cfg);
Matrix plant_measurement_noise(const SimConfig& cfg);
Matrix input_measurement_noise(const SimConfig& cfg);

/// Linear closed-loop transition matrix over [plant state, integrators] (saturation
/// ignored), or the open-loop A_d when terminal voltages are fixed.
Matrix closed_loop_matrix(const SimConfig& cfg, const DiscreteLtiModel& plant);
double spectral_radius(const Matrix& m);

/// Record time of index k, rounded to nanoseconds so CSV text round-trips exactly.
double record_time(std::size_t k, double step);

/// Number of records for a run: 0 for zero duration, else duration/step + 1.
std::size_t record_count(double duration, double step);

PlantTrace run_plant(const SimConfig& cfg);

/// Keep-every-k factor between two rates. Throws std::invalid_argument unless
/// target divides source.
std::size_t downsample_factor(double source_rate_hz, double target_rate_hz);

template <typename T>
std::vector<T> take_every(const std::vector<T>& samples, std::size_t k) {
  std::vector<T> out;
  out.reserve(samples.size() / k + 1);
  for (std::size_t i = 0; i < samples.size(); i += k) out.push_back(samples[i]);
  return out;
}

PlantTrace downsample(const PlantTrace& trace, double target_rate_hz);

}  // namespace mgse
