#pragma once

// Decentralized estimation: one local Kalman filter per DGU bus running at the
// sensor rate, and one global filter over the line currents running at a lower
// rate. The global filter takes bus-voltage differences of the local estimates as
// its inputs.

#include <optional>
#include <string>
#include <vector>

#include "mgse/discretize.hpp"
#include "mgse/kalman.hpp"
#include "mgse/models.hpp"
#include "mgse/sim.hpp"

namespace mgse {

struct EstimateTrace {
  std::vector<std::string> labels;
  std::vector<double> t;
  std::vector<Vector> estimate;
  std::vector<Vector> innovation;
  std::vector<Matrix> innovation_covariance;
  /// Inputs consumed by each step (entry k was used to predict sample k+1).
  std::vector<Vector> inputs;
};

struct LocalEstimator {
  int bus = 1;
  KalmanEstimator filter;
  double rate_hz = 0.0;
};

struct GlobalEstimator {
  std::vector<LineParams> lines;
  int n_buses = 0;
  KalmanEstimator filter;
  double rate_hz = 0.0;
};

/// Per-sample local measurements: z = noisy [v_d, v_q, i_td, i_tq],
/// u = noisy [v_td, v_tq, i_od, i_oq].
struct LocalMeasurements {
  std::vector<double> t;
  std::vector<Vector> z;
  std::vector<Vector> u;
};

LocalMeasurements local_measurements(const PlantTrace& trace, int bus);
/// Noisy line currents, stacked per line.
std::vector<Vector> line_measurements(const PlantTrace& trace, int n_buses);

LocalEstimator make_local_estimator(const MicrogridTopology& topology, int bus,
                                    const NoiseSpec& noise, double rate_hz,
                                    DiscretizationMethod method);

/// Line-current filter. `bus_voltage_covariance` is the stacked (2N x 2N) error
/// covariance of the voltage estimates feeding it; it is mapped to the
/// voltage-difference inputs and folded into the process noise.
GlobalEstimator make_global_estimator(const MicrogridTopology& topology, const Matrix& q_lines,
                                      const Matrix& r_lines, const Matrix& bus_voltage_covariance,
                                      double rate_hz, DiscretizationMethod method);

/// Steady-state posterior covariance of a local estimator.
Matrix local_steady_state_covariance(const LocalEstimator& est);

/// Incidence map from stacked bus voltages (2N) to stacked line voltage
/// differences v_from - v_to (2L).
Matrix voltage_difference_map(const std::vector<LineParams>& lines, int n_buses);

/// Initializes from the first measurement (x = z_0, P = R), then steps with
/// u_{k-1}, z_k. Kalman errors are rethrown with the sample index attached.
EstimateTrace run_local(LocalEstimator& est, const LocalMeasurements& measurements);

/// `bus_voltages` holds the stacked per-bus dq voltage estimates at `voltage_times`;
/// both streams must share timestamps with `current_times`.
EstimateTrace run_global(GlobalEstimator& est, const std::vector<double>& voltage_times,
                         const std::vector<Vector>& bus_voltages,
                         const std::vector<double>& current_times,
                         const std::vector<Vector>& line_currents);

struct EstimatorSettings {
  std::vector<NoiseSpec> local_noise;  // one per bus
  Matrix global_q;                     // 2L x 2L
  Matrix global_r;                     // 2L x 2L
  double local_rate_hz = 10000.0;
  double global_rate_hz = 100.0;
  DiscretizationMethod method = DiscretizationMethod::kExact;
};

struct DecentralizedResult {
  std::vector<EstimateTrace> local;  // index = bus - 1
  EstimateTrace global;
  std::size_t global_stride = 1;     // local samples per global sample
};

/// Runs every local estimator (concurrently when `parallel`) and then the global
/// estimator on every `global_stride`-th local estimate. Output does not depend on
/// scheduling.
DecentralizedResult run_decentralized(const MicrogridTopology& topology, const PlantTrace& trace,
                                      const EstimatorSettings& settings, bool parallel);

struct TimeWindow {
  double start = 0.0;
  double end = 0.0;
};

struct RmseResult {
  Vector per_channel;
  double aggregate = 0.0;
  std::size_t samples = 0;
};

/// Root-mean-square error per channel between two aligned sequences. When
/// `windows` is non-empty only samples with t inside one of the (closed) windows
/// count.
RmseResult rmse(const std::vector<Vector>& estimate, const std::vector<Vector>& truth);
RmseResult rmse(const std::vector<Vector>& estimate, const std::vector<Vector>& truth,
                const std::vector<double>& t, const std::vector<TimeWindow>& windows);

/// Time from `event_time` to the first sample t_k >= event_time at which the RMS of
/// the channel error over [t_k, t_k + window) is below `threshold`. Empty if that
/// never happens within the trace.
std::optional<double> recovery_time(const std::vector<double>& t, const std::vector<double>& error,
                                    double event_time, double threshold, double window);

/// Extracts one channel of a vector sequence.
std::vector<double> channel(const std::vector<Vector>& samples, Eigen::Index index);

}  // namespace mgse
